//! Token-budgeted prompt assembly.
//!
//! The profile budget is `L_max - min(|q|, floor(gamma * L_max))`. Template
//! boilerplate is charged against it first, then ranked documents are added
//! whole, in rank order, while they fit. The first document that does not fit
//! is cut word by word to the remaining room and ends the profile section.
//! With no document included the task's non-personalized template is used.

mod tokenizer;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, QueryInstance, TaskId};
use crate::error::{Error, Result};

pub use tokenizer::{count_tokens, TokenCounter, WordPiece};

/// Candidate labels of the movie-tagging task.
pub const LAMP2_TAGS: [&str; 15] = [
    "sci-fi",
    "based on a book",
    "comedy",
    "action",
    "twist ending",
    "dystopia",
    "dark comedy",
    "classic",
    "psychology",
    "fantasy",
    "romance",
    "thought-provoking",
    "social commentary",
    "violence",
    "true story",
];

const PLACEHOLDERS: [&str; 6] = ["query", "profile_items", "tag_list", "reference_list", "text", "output"];

#[derive(Debug, Clone)]
pub struct BudgetPolicy {
    pub l_max: usize,
    pub gamma: f64,
    pub output_cap: usize,
    pub counter: TokenCounter,
}

impl Default for BudgetPolicy {
    fn default() -> Self {
        Self {
            l_max: 512,
            gamma: 0.55,
            output_cap: 128,
            counter: TokenCounter::Whitespace,
        }
    }
}

impl BudgetPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.l_max == 0 {
            return Err(Error::InvalidParams("L_max must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidParams(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// `floor(gamma * L_max)`
    pub fn query_cap(&self) -> usize {
        (self.gamma * self.l_max as f64).floor() as usize
    }
}

pub fn profile_budget(query_len: usize, policy: &BudgetPolicy) -> usize {
    policy.l_max - query_len.min(policy.query_cap())
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub prompt: String,
    pub item: String,
    #[serde(default = "default_separator")]
    pub separator: String,
    pub vanilla: String,
}

fn default_separator() -> String {
    ", ".into()
}

impl Template {
    fn parse(name: &str, text: &str) -> Result<Self> {
        let bad = |reason: String| Error::Template {
            name: name.to_string(),
            reason,
        };
        let t: Template = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        for (field, body, required) in [
            ("prompt", &t.prompt, &["query", "profile_items"][..]),
            ("item", &t.item, &["text"][..]),
            ("vanilla", &t.vanilla, &["query"][..]),
        ] {
            for r in required {
                if !body.contains(&format!("{{{{{r}}}}}")) {
                    return Err(bad(format!("`{field}` lacks {{{{{r}}}}}")));
                }
            }
            for p in placeholders(body) {
                if !PLACEHOLDERS.contains(&p) {
                    return Err(bad(format!("`{field}` uses unknown placeholder {{{{{p}}}}}")));
                }
            }
        }
        Ok(t)
    }

    fn capitalizes_items(&self) -> bool {
        !self.item.starts_with("{{")
    }
}

fn placeholders(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(i) = rest.find("{{") {
        let after = &rest[i + 2..];
        match after.find("}}") {
            Some(j) => {
                out.push(&after[..j]);
                rest = &after[j + 2..];
            }
            None => break,
        }
    }
    out
}

/// Single-pass substitution, so substituted text is never re-expanded.
fn fill(body: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(i) = rest.find("{{") {
        out.push_str(&rest[..i]);
        let after = &rest[i + 2..];
        let Some(j) = after.find("}}") else {
            out.push_str(&rest[i..]);
            return out;
        };
        match vars.iter().find(|(k, _)| *k == &after[..j]) {
            Some((_, v)) => out.push_str(v),
            None => out.push_str(&rest[i..i + 2 + j + 2]),
        }
        rest = &after[j + 2..];
    }
    out.push_str(rest);
    out
}

fn builtin_source(task: TaskId) -> &'static str {
    match task {
        TaskId::Lamp1 => include_str!("templates/lamp1.toml"),
        TaskId::Lamp2 | TaskId::Synth => include_str!("templates/lamp2.toml"),
        TaskId::Lamp3 => include_str!("templates/lamp3.toml"),
        TaskId::Lamp4 => include_str!("templates/lamp4.toml"),
        TaskId::Lamp5 => include_str!("templates/lamp5.toml"),
        TaskId::Lamp7 => include_str!("templates/lamp7.toml"),
    }
}

/// Per-task templates: built-ins, optionally overridden by `<task>.toml`
/// files (e.g. `lamp2.toml`) in a directory.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TaskId, Template>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = TaskId::ALL
            .into_iter()
            .map(|t| (t, Template::parse(t.as_str(), builtin_source(t)).expect("built-in templates are valid")))
            .collect();
        Self { templates }
    }

    pub fn with_overrides(dir: &Path) -> Result<Self> {
        let mut set = Self::builtin();
        for task in TaskId::ALL {
            let path = dir.join(format!("{}.toml", task.as_str().to_ascii_lowercase()));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                set.templates.insert(task, Template::parse(&path.display().to_string(), &text)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, task: TaskId) -> Result<&Template> {
        self.templates
            .get(&task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncludedDoc {
    pub doc_id: String,
    pub owner_user_id: String,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub query_id: String,
    pub task_id: TaskId,
    pub prompt_text: String,
    pub query_tokens: usize,
    pub profile_tokens: usize,
    pub overhead_tokens: usize,
    pub profile_budget: usize,
    pub l_max: usize,
    /// In retrieval rank order.
    pub included_docs: Vec<IncludedDoc>,
    /// No document fit, so the non-personalized template was used.
    pub vanilla: bool,
    pub query_truncated: bool,
}

/// Splits a citation-task input into the query proper and its reference
/// list, which starts at the first `[1]`.
fn split_query(task: TaskId, input: &str) -> (String, String) {
    if task == TaskId::Lamp1 {
        if let Some(i) = input.find("[1]") {
            return (input[..i].trim().to_string(), input[i..].trim().to_string());
        }
    }
    (input.trim().to_string(), String::new())
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Longest whitespace-word prefix of `text` with at most `limit` tokens.
fn truncate_words(text: &str, limit: usize, counter: &TokenCounter) -> (String, bool) {
    if counter.count(text) <= limit {
        return (text.to_string(), false);
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let w = largest_fitting(words.len(), |w| counter.count(&words[..w].join(" ")) <= limit);
    (words[..w].join(" "), true)
}

/// Largest `w` in `0..=n` with `fits(w)`, for monotone `fits` and `fits(0)`
/// assumed true.
fn largest_fitting(n: usize, fits: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0usize, n);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

pub fn render_prompt(
    query: &QueryInstance,
    docs: &[&Document],
    policy: &BudgetPolicy,
    templates: &TemplateSet,
) -> Result<PromptBundle> {
    policy.validate()?;
    let task = query.task_id;
    let tpl = templates.get(task)?;
    let counter = &policy.counter;
    let (q_text, refs) = split_query(task, &query.input_text);
    let tag_list = if matches!(task, TaskId::Lamp2 | TaskId::Synth) {
        LAMP2_TAGS.join(", ")
    } else {
        String::new()
    };

    let overhead = counter.count(&fill(
        &tpl.prompt,
        &[("query", ""), ("profile_items", ""), ("tag_list", &tag_list), ("reference_list", "")],
    ));
    let q_raw = counter.count(&q_text) + counter.count(&refs);
    let budget = profile_budget(q_raw, policy);
    let allowance = budget.saturating_sub(overhead);

    let item = |text: &str, doc: &Document| fill(&tpl.item, &[("text", text), ("output", doc.paired_output.as_deref().unwrap_or(""))]);
    let section_of = |parts: &[String]| {
        let s = parts.join(&tpl.separator);
        if tpl.capitalizes_items() {
            capitalize_first(&s)
        } else {
            s
        }
    };
    let mut parts: Vec<String> = Vec::new();
    let mut included = Vec::new();
    for doc in docs {
        let mut trial = parts.clone();
        trial.push(item(&doc.text, doc));
        if counter.count(&section_of(&trial)) <= allowance {
            parts = trial;
            included.push(IncludedDoc {
                doc_id: doc.doc_id.clone(),
                owner_user_id: doc.user_id.clone(),
                truncated: false,
            });
            continue;
        }
        let words: Vec<&str> = doc.text.split_whitespace().collect();
        let with_words = |w: usize| {
            let mut t = parts.clone();
            t.push(item(&words[..w].join(" "), doc));
            t
        };
        let w = largest_fitting(words.len(), |w| w == 0 || counter.count(&section_of(&with_words(w))) <= allowance);
        if w > 0 {
            parts = with_words(w);
            included.push(IncludedDoc {
                doc_id: doc.doc_id.clone(),
                owner_user_id: doc.user_id.clone(),
                truncated: true,
            });
        }
        break;
    }

    let vanilla = included.is_empty();
    let (body, overhead, profile_items) = if vanilla {
        let o = counter.count(&fill(&tpl.vanilla, &[("query", ""), ("tag_list", &tag_list), ("reference_list", "")]));
        (&tpl.vanilla, o, String::new())
    } else {
        (&tpl.prompt, overhead, section_of(&parts))
    };
    let profile_tokens = counter.count(&profile_items);
    let room = policy.l_max.checked_sub(overhead + profile_tokens).ok_or_else(|| {
        Error::InvalidParams(format!("template overhead of {overhead} tokens exceeds L_max = {}", policy.l_max))
    })?;

    let ref_tokens = counter.count(&refs);
    let (q_final, refs_final, query_truncated) = if counter.count(&q_text) + ref_tokens <= room {
        (q_text, refs, false)
    } else if ref_tokens <= room {
        (truncate_words(&q_text, room - ref_tokens, counter).0, refs, true)
    } else {
        (String::new(), truncate_words(&refs, room, counter).0, true)
    };
    let prompt_text = fill(
        body,
        &[
            ("query", &q_final),
            ("profile_items", &profile_items),
            ("tag_list", &tag_list),
            ("reference_list", &refs_final),
        ],
    );
    Ok(PromptBundle {
        query_id: query.query_id.clone(),
        task_id: task,
        prompt_text,
        query_tokens: counter.count(&q_final) + counter.count(&refs_final),
        profile_tokens,
        overhead_tokens: overhead,
        profile_budget: budget,
        l_max: policy.l_max,
        included_docs: included,
        vanilla,
        query_truncated,
    })
}
