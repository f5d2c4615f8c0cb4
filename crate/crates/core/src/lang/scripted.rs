//! Deterministic rule-driven provider.
//!
//! Rules file format (UTF-8, `#` starts a comment line):
//!
//! ```text
//! when: controller contains "nearby: Richard"
//! reply: TALK | subgoal: ask Richard about last night
//!
//! when: talk contains "You are Dmitri" contains "Lizhi" reply: I saw something last night.
//!
//! when: talk
//! reply: first line
//! reply: second line
//!
//! default controller: REFLECT | subgoal: reconsider
//! default: I am not sure.
//! ```
//!
//! A rule matches when the template id equals the `when:` id (`*` matches
//! any) and every `contains` substring occurs in the rendered prompt. Rules
//! are tried in file order; the first match wins. A rule with several
//! `reply:` lines cycles through them, with a separate cursor per agent.
//! Replies may reference prompt slots as `{slot}`; `\n` in a reply is a
//! newline. When nothing matches, the per-template default, then the global
//! default, is returned and counted as a rule miss; without either the call
//! fails with [`LangError::RuleMiss`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use super::template::substitute;
use super::{Generation, GenerationRequest, LangError, LanguageProvider};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("rules line {line}: {message}")]
pub struct RuleParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
struct Rule {
    template: Option<String>,
    contains: Vec<String>,
    replies: Vec<String>,
    line: usize,
}

impl Rule {
    fn matches(&self, template_id: &str, rendered: &str) -> bool {
        self.template.as_deref().is_none_or(|t| t == template_id) && self.contains.iter().all(|s| rendered.contains(s.as_str()))
    }
}

pub struct ScriptedProvider {
    name: String,
    rules: Vec<Rule>,
    defaults: HashMap<String, String>,
    global_default: Option<String>,
    context_limit: u64,
    cursors: Mutex<HashMap<(usize, String), usize>>,
    misses: AtomicU64,
    calls: AtomicU64,
}

impl ScriptedProvider {
    pub fn parse(source: &str) -> Result<Self, RuleParseError> {
        let mut rules: Vec<Rule> = Vec::new();
        let mut defaults = HashMap::new();
        let mut global_default = None;
        let mut open: Option<Rule> = None;

        let close = |open: &mut Option<Rule>, rules: &mut Vec<Rule>| -> Result<(), RuleParseError> {
            if let Some(rule) = open.take() {
                if rule.replies.is_empty() {
                    return Err(RuleParseError {
                        line: rule.line,
                        message: "rule has no `reply:`".into(),
                    });
                }
                rules.push(rule);
            }
            Ok(())
        };

        for (idx, raw) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("when:") {
                close(&mut open, &mut rules)?;
                let (rule, inline_reply) = parse_when(rest, line_no)?;
                let mut rule = rule;
                if let Some(reply) = inline_reply {
                    rule.replies.push(reply);
                }
                open = Some(rule);
            } else if let Some(rest) = line.strip_prefix("reply:") {
                let Some(rule) = open.as_mut() else {
                    return Err(RuleParseError {
                        line: line_no,
                        message: "`reply:` without a preceding `when:`".into(),
                    });
                };
                rule.replies.push(unescape(rest.trim()));
            } else if let Some(rest) = line.strip_prefix("default") {
                close(&mut open, &mut rules)?;
                let Some((target, text)) = rest.split_once(':') else {
                    return Err(RuleParseError {
                        line: line_no,
                        message: "expected `default:` or `default <template>:`".into(),
                    });
                };
                let target = target.trim();
                let text = unescape(text.trim());
                if target.is_empty() {
                    global_default = Some(text);
                } else {
                    defaults.insert(target.to_string(), text);
                }
            } else {
                return Err(RuleParseError {
                    line: line_no,
                    message: format!("unrecognized directive `{line}`"),
                });
            }
        }
        close(&mut open, &mut rules)?;
        Ok(Self {
            name: "scripted".into(),
            rules,
            defaults,
            global_default,
            context_limit: 16_384,
            cursors: Mutex::new(HashMap::new()),
            misses: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        })
    }

    /// Loads a rules file; parse errors carry the line number.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RuleParseError> {
        let path = path.as_ref();
        let source = fs::read_to_string(path).map_err(|e| RuleParseError {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&source)
    }

    pub fn with_context_limit(mut self, limit: u64) -> Self {
        self.context_limit = limit;
        self
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    /// Calls answered by a default because no rule matched.
    pub fn rule_misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LanguageProvider for ScriptedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn context_limit(&self) -> u64 {
        self.context_limit
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<Generation, LangError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hit = self
            .rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.matches(request.template_id, request.rendered));
        let reply = match hit {
            Some((index, rule)) => {
                let cursor = if rule.replies.len() == 1 {
                    0
                } else {
                    let mut cursors = self.cursors.lock().expect("cursor lock");
                    let c = cursors.entry((index, request.agent_id.to_string())).or_insert(0);
                    let current = *c % rule.replies.len();
                    *c += 1;
                    current
                };
                tracing::trace!(rule_line = rule.line, template = request.template_id, "scripted rule hit");
                &rule.replies[cursor]
            }
            None => {
                let fallback = self
                    .defaults
                    .get(request.template_id)
                    .or(self.global_default.as_ref())
                    .ok_or_else(|| LangError::RuleMiss {
                        template: request.template_id.to_string(),
                    });
                self.misses.fetch_add(1, Ordering::SeqCst);
                fallback?
            }
        };
        Ok(Generation::text(substitute(reply, &request.prompt.slots)))
    }
}

fn parse_when(rest: &str, line: usize) -> Result<(Rule, Option<String>), RuleParseError> {
    let err = |message: String| RuleParseError { line, message };
    let mut s = rest.trim_start();
    let id_end = s.find(char::is_whitespace).unwrap_or(s.len());
    let template = &s[..id_end];
    if template.is_empty() {
        return Err(err("missing template id after `when:`".into()));
    }
    s = s[id_end..].trim_start();
    let mut contains = Vec::new();
    let mut inline_reply = None;
    while !s.is_empty() {
        if let Some(after) = s.strip_prefix("contains") {
            let after = after.trim_start();
            let (quoted, remaining) = parse_quoted(after).ok_or_else(|| err("expected a quoted string after `contains`".into()))?;
            contains.push(quoted);
            s = remaining.trim_start();
        } else if let Some(after) = s.strip_prefix("and") {
            s = after.trim_start();
        } else if let Some(after) = s.strip_prefix("reply:") {
            inline_reply = Some(unescape(after.trim()));
            break;
        } else {
            return Err(err(format!("unexpected `{s}` in `when:` clause")));
        }
    }
    let template = (template != "*").then(|| template.to_string());
    Ok((
        Rule {
            template,
            contains,
            replies: Vec::new(),
            line,
        },
        inline_reply,
    ))
}

/// Parses `"..."` with `\"` and `\\` escapes; returns the content and the
/// remainder after the closing quote.
fn parse_quoted(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix('"')?;
    let mut out = String::new();
    let mut chars = body.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some((_, e)) => out.push(e),
                None => return None,
            },
            '"' => return Some((out, &body[i + 1..])),
            other => out.push(other),
        }
    }
    None
}

fn unescape(s: &str) -> String {
    s.replace("\\n", "\n")
}
