//! Sectioned text templates.
//!
//! A template file is a list of sections. A line `@@ name` opens a section and
//! `@@ name?` opens an optional one, dropped when every slot it references is
//! absent or empty. Inside a body, `{slot}` is replaced by the slot value and
//! `{{` / `}}` produce literal braces. A section with an empty body in a
//! strategy file removes that section.

use std::collections::BTreeMap;
use std::path::Path;

use super::PromptError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub id: String,
    pub optional: bool,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Template {
    pub sections: Vec<Section>,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let mut sections: Vec<Section> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if let Some(header) = line.strip_prefix("@@ ") {
                let header = header.trim();
                let (id, optional) = match header.strip_suffix('?') {
                    Some(id) => (id.trim(), true),
                    None => (header, false),
                };
                if id.is_empty() || !id.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    return Err(PromptError::Template {
                        name: name.to_string(),
                        message: format!("line {}: bad section name '{id}'", lineno + 1),
                    });
                }
                sections.push(Section {
                    id: id.to_string(),
                    optional,
                    body: String::new(),
                });
            } else {
                let Some(current) = sections.last_mut() else {
                    if line.trim().is_empty() {
                        continue;
                    }
                    return Err(PromptError::Template {
                        name: name.to_string(),
                        message: format!("line {}: text before the first section", lineno + 1),
                    });
                };
                current.body.push_str(line);
                current.body.push('\n');
            }
        }
        for s in &mut sections {
            let trimmed = s.body.trim_end_matches('\n').len();
            s.body.truncate(trimmed);
        }
        Ok(Self { sections })
    }

    pub fn section(&self, id: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.id == id)
    }

    /// Renders every section in file order, joined by blank lines.
    pub fn render(&self, slots: &BTreeMap<String, String>) -> Result<String, PromptError> {
        let mut parts = Vec::new();
        for section in &self.sections {
            if let Some(text) = render_section(section, slots)? {
                parts.push(text);
            }
        }
        Ok(parts.join("\n\n"))
    }
}

/// Renders one section; `None` when an optional section has nothing to show
/// or the body is empty.
pub(crate) fn render_section(
    section: &Section,
    slots: &BTreeMap<String, String>,
) -> Result<Option<String>, PromptError> {
    if section.body.is_empty() {
        return Ok(None);
    }
    let referenced = slot_names(&section.body);
    if section.optional
        && referenced
            .iter()
            .all(|s| slots.get(*s).is_none_or(|v| v.trim().is_empty()))
    {
        return Ok(None);
    }
    render_body(&section.body, slots, &section.id).map(Some)
}

fn is_slot_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'
}

/// Slot names referenced by `body`, in order of appearance.
pub fn slot_names(body: &str) -> Vec<&str> {
    let mut names = Vec::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => i += 2,
            b'}' if bytes.get(i + 1) == Some(&b'}') => i += 2,
            b'{' => {
                let rest = &body[i + 1..];
                let len = rest.find(|c: char| !is_slot_char(c)).unwrap_or(rest.len());
                if len > 0 && rest[len..].starts_with('}') {
                    names.push(&rest[..len]);
                    i += len + 2;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    names
}

/// Substitutes `{slot}` references; slot values are inserted verbatim and
/// never re-expanded.
pub fn render_body(
    body: &str,
    slots: &BTreeMap<String, String>,
    section: &str,
) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if let Some(inner) = tail.strip_prefix('{') {
            let len = inner.find(|c: char| !is_slot_char(c)).unwrap_or(inner.len());
            if len > 0 && inner[len..].starts_with('}') {
                let name = &inner[..len];
                let value = slots.get(name).ok_or_else(|| PromptError::MissingSlot {
                    slot: name.to_string(),
                    section: section.to_string(),
                })?;
                out.push_str(value);
                rest = &inner[len + 1..];
            } else {
                out.push('{');
                rest = inner;
            }
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

macro_rules! builtin_templates {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../templates/", $name, ".txt")))),*]
    };
}

/// Every template shipped with the crate, keyed by `<dir>/<name>`.
pub const BUILTIN: &[(&str, &str)] = builtin_templates!(
    "function/zero_shot",
    "function/deflanderization",
    "function/few_shot",
    "function/cot",
    "function/define_function",
    "dialogue/zero_shot",
    "dialogue/deflanderization",
    "dialogue/few_shot",
    "dialogue/remove_world",
    "dialogue/guide",
    "dialogue/most_word",
    "refine/refine",
    "datagen/function_calling",
    "datagen/multi_turn",
    "datagen/reasoning",
);

/// Parsed template files, keyed like [`BUILTIN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, text)| {
                let t = Template::parse(name, text).expect("bundled templates parse");
                (name.to_string(), t)
            })
            .collect();
        Self { templates }
    }

    /// Built-in templates overridden by any `<dir>/<phase>/<strategy>.txt`
    /// files present under `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let mut set = Self::builtin();
        for (name, _) in BUILTIN {
            let path = dir.join(format!("{name}.txt"));
            if path.is_file() {
                let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Template {
                    name: name.to_string(),
                    message: e.to_string(),
                })?;
                set.templates
                    .insert(name.to_string(), Template::parse(name, &text)?);
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Option<&Template> {
        self.templates.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, template: Template) {
        self.templates.insert(name.into(), template);
    }

    pub(crate) fn require(&self, name: &str) -> Result<&Template, PromptError> {
        self.get(name).ok_or_else(|| PromptError::Template {
            name: name.to_string(),
            message: "template not found".into(),
        })
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_sections_and_optional_flag() {
        let t = Template::parse("t", "@@ a\nhello {name}\n\n@@ b?\n{extra}\n@@ c\n").unwrap();
        assert_eq!(t.sections.len(), 3);
        assert_eq!(t.sections[0].body, "hello {name}");
        assert!(t.sections[1].optional);
        assert_eq!(t.sections[2].body, "");
    }

    #[test]
    fn renders_slots_and_escapes() {
        let out = render_body("{{\"k\": \"{v}\"}} {not a slot}", &slots(&[("v", "x")]), "s").unwrap();
        assert_eq!(out, "{\"k\": \"x\"} {not a slot}");
    }

    #[test]
    fn slot_values_are_not_reexpanded() {
        let out = render_body("{a}", &slots(&[("a", "{b}")]), "s").unwrap();
        assert_eq!(out, "{b}");
    }

    #[test]
    fn missing_slot_is_reported() {
        let err = render_body("{a}", &slots(&[]), "sec").unwrap_err();
        assert!(matches!(err, PromptError::MissingSlot { ref slot, ref section } if slot == "a" && section == "sec"));
    }

    #[test]
    fn optional_section_dropped_when_empty() {
        let t = Template::parse("t", "@@ a\nx\n@@ b?\nheader\n{extra}\n").unwrap();
        assert_eq!(t.render(&slots(&[])).unwrap(), "x");
        assert_eq!(t.render(&slots(&[("extra", " ")])).unwrap(), "x");
        assert_eq!(t.render(&slots(&[("extra", "y")])).unwrap(), "x\n\nheader\ny");
    }

    #[test]
    fn text_before_first_section_rejected() {
        assert!(Template::parse("t", "oops\n@@ a\n").is_err());
        assert!(Template::parse("t", "@@ Bad Name\n").is_err());
    }

    #[test]
    fn slot_name_scan() {
        assert_eq!(slot_names("{a} {{b}} {c_1} {D}"), vec!["a", "c_1"]);
    }

    #[test]
    fn all_builtins_parse() {
        let set = TemplateSet::builtin();
        for (name, _) in BUILTIN {
            assert!(set.get(name).is_some(), "{name}");
        }
    }

    #[test]
    fn directory_overrides_replace_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("dialogue")).unwrap();
        std::fs::write(dir.path().join("dialogue/guide.txt"), "@@ style_guide\n# Custom Guide\n").unwrap();
        let set = TemplateSet::from_dir(dir.path()).unwrap();
        assert_eq!(set.get("dialogue/guide").unwrap().sections[0].body, "# Custom Guide");
        assert_eq!(set.get("dialogue/few_shot"), TemplateSet::builtin().get("dialogue/few_shot"));
    }
}
