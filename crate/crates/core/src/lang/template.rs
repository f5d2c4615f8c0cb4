//! Plain-text prompt templates with `{slot}` placeholders.
//!
//! Template files are named `<id>.v<version>.txt`. The builtin set is
//! compiled in; a directory of files can override individual templates.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::LangError;

/// A prompt before rendering: which template plus the slot values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Prompt {
    pub template_id: String,
    pub slots: BTreeMap<String, String>,
}

impl Prompt {
    pub fn new(template_id: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            slots: BTreeMap::new(),
        }
    }

    pub fn slot(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.slots.insert(name.into(), value.into());
        self
    }

    pub fn set(&mut self, name: impl Into<String>, value: impl Into<String>) {
        self.slots.insert(name.into(), value.into());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub id: String,
    pub version: u32,
    pub body: String,
    slots: BTreeSet<String>,
}

impl Template {
    pub fn parse(id: impl Into<String>, version: u32, body: impl Into<String>) -> Self {
        let body = body.into();
        let slots = placeholders(&body).into_iter().collect();
        Self {
            id: id.into(),
            version,
            body,
            slots,
        }
    }

    /// Placeholder names declared in the body.
    pub fn slots(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(String::as_str)
    }

    /// Fills every declared slot. Extra slot values are allowed and ignored.
    pub fn render(&self, slots: &BTreeMap<String, String>) -> Result<String, LangError> {
        if let Some(missing) = self.slots.iter().find(|s| !slots.contains_key(*s)) {
            return Err(LangError::MissingSlot {
                template: self.id.clone(),
                slot: missing.clone(),
            });
        }
        Ok(substitute(&self.body, slots))
    }
}

/// Names of `{identifier}` placeholders in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if is_identifier(name) && !found.iter().any(|f| f == name) {
                    found.push(name.to_string());
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    found
}

fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Replaces `{name}` with the slot value when the slot exists; unknown
/// placeholders are left as written.
pub fn substitute(text: &str, slots: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match slots.get(name) {
                    Some(value) if is_identifier(name) => out.push_str(value),
                    _ => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

const BUILTIN: &[(&str, u32, &str)] = &[
    ("controller", 1, include_str!("../../templates/controller.v1.txt")),
    ("talk", 1, include_str!("../../templates/talk.v1.txt")),
    ("reflect", 1, include_str!("../../templates/reflect.v1.txt")),
    ("summary", 1, include_str!("../../templates/summary.v1.txt")),
    ("consolidate", 1, include_str!("../../templates/consolidate.v1.txt")),
    ("interview_init", 1, include_str!("../../templates/interview_init.v1.txt")),
    ("interview", 1, include_str!("../../templates/interview.v1.txt")),
];

#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(id, version, body)| (id.to_string(), Template::parse(*id, *version, *body)))
            .collect();
        Self { templates }
    }

    pub fn empty() -> Self {
        Self {
            templates: BTreeMap::new(),
        }
    }

    /// Builtins overridden by every `<id>.v<n>.txt` file in `dir`. When a
    /// directory holds several versions of one id, the highest wins.
    pub fn builtin_with_overrides(dir: impl AsRef<Path>) -> Result<Self, LangError> {
        let mut set = Self::builtin();
        let dir = dir.as_ref();
        let entries = fs::read_dir(dir).map_err(|e| LangError::Template(format!("{}: {e}", dir.display())))?;
        let mut loaded: BTreeMap<String, Template> = BTreeMap::new();
        for entry in entries {
            let path = entry.map_err(|e| LangError::Template(e.to_string()))?.path();
            let Some(file_name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some((id, version)) = parse_file_name(file_name) else {
                continue;
            };
            let body = fs::read_to_string(&path).map_err(|e| LangError::Template(format!("{}: {e}", path.display())))?;
            let candidate = Template::parse(id, version, body);
            match loaded.get(&candidate.id) {
                Some(existing) if existing.version >= candidate.version => {}
                _ => {
                    loaded.insert(candidate.id.clone(), candidate);
                }
            }
        }
        set.templates.extend(loaded);
        Ok(set)
    }

    pub fn insert(&mut self, template: Template) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn render(&self, prompt: &Prompt) -> Result<String, LangError> {
        self.templates
            .get(&prompt.template_id)
            .ok_or_else(|| LangError::UnknownTemplate(prompt.template_id.clone()))?
            .render(&prompt.slots)
    }
}

fn parse_file_name(name: &str) -> Option<(&str, u32)> {
    let stem = name.strip_suffix(".txt")?;
    let (id, version) = stem.rsplit_once(".v")?;
    Some((id, version.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_without_slots_renders_verbatim() {
        let t = Template::parse("plain", 1, "Choose an option now.");
        assert_eq!(t.render(&BTreeMap::new()).unwrap(), "Choose an option now.");
    }

    #[test]
    fn missing_slot_is_reported() {
        let t = Template::parse("t", 1, "Goal: {goal}\nSummary: {summary}");
        let mut slots = BTreeMap::new();
        slots.insert("goal".to_string(), "find the truth".to_string());
        assert_eq!(
            t.render(&slots),
            Err(LangError::MissingSlot {
                template: "t".into(),
                slot: "summary".into()
            })
        );
    }

    #[test]
    fn substitute_leaves_unknown_placeholders() {
        let mut slots = BTreeMap::new();
        slots.insert("a".to_string(), "1".to_string());
        assert_eq!(substitute("{a} {b} {", &slots), "1 {b} {");
        assert_eq!(substitute("json {\"k\": 1}", &slots), "json {\"k\": 1}");
    }

    #[test]
    fn builtins_declare_expected_slots() {
        let set = TemplateSet::builtin();
        let controller: Vec<_> = set.get("controller").unwrap().slots().collect();
        for slot in ["goal", "summary", "memories", "observations", "nearby"] {
            assert!(controller.contains(&slot), "controller lacks {slot}");
        }
        assert!(set.get("talk").unwrap().slots().any(|s| s == "subgoal"));
    }

    #[test]
    fn directory_overrides_pick_highest_version() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("talk.v2.txt"), "v2 {subgoal}").unwrap();
        fs::write(dir.path().join("talk.v3.txt"), "v3 {subgoal}").unwrap();
        fs::write(dir.path().join("notes.md"), "ignored").unwrap();
        let set = TemplateSet::builtin_with_overrides(dir.path()).unwrap();
        let talk = set.get("talk").unwrap();
        assert_eq!(talk.version, 3);
        assert_eq!(talk.body, "v3 {subgoal}");
        assert_eq!(set.get("controller").unwrap().version, 1);
    }
}
