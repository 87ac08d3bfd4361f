//! Prompt templates with named placeholders and a versioned on-disk library.
//!
//! Template syntax:
//! - `{name}`: placeholder, lowercase snake-case.
//! - `{{` / `}}`: literal braces.
//! - A line holding only `{#if name}` opens a block kept iff `name` has a non-empty
//!   value; a line holding only `{/if}` closes it. Blocks do not nest.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    ForecasterBase,
    Refiner,
    Synthesis,
    AspStrategy,
}

impl TemplateKind {
    /// Placeholders a template of this kind may use.
    pub fn allowed_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::ForecasterBase => &[
                "target_variable",
                "data_name",
                "data_description",
                "prediction_length",
                "instructions",
                "raft_context",
                "segment_count",
                "previous_sequence_length_data",
            ],
            TemplateKind::Refiner => &[
                "iteration",
                "current_instructions_under_review",
                "mae_to_report_to_teacher",
                "refinement_history",
                "target_variable",
                "samples",
                "stop_threshold",
            ],
            TemplateKind::Synthesis => &["current_learnings"],
            TemplateKind::AspStrategy => &["sequence_length"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub kind: TemplateKind,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, kind: TemplateKind, body: impl Into<String>) -> Result<Self, PromptError> {
        let t = Self {
            id: id.into(),
            kind,
            body: body.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Checks syntax and that every placeholder belongs to the kind's documented set.
    pub fn validate(&self) -> Result<(), PromptError> {
        let allowed = self.kind.allowed_placeholders();
        for name in placeholders(&self.body)? {
            if !allowed.contains(&name.as_str()) {
                return Err(PromptError::Template(format!(
                    "template {:?} uses undocumented placeholder {{{name}}}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        render(&self.body, values)
    }
}

/// Placeholder names referenced by a template body, including `{#if}` conditions.
pub fn placeholders(body: &str) -> Result<Vec<String>, PromptError> {
    let mut names = Vec::new();
    for line in body.lines() {
        if let Some(cond) = if_condition(line) {
            names.push(cond.to_string());
            continue;
        }
        if line.trim() == "{/if}" {
            continue;
        }
        let mut rest = line;
        while let Some(pos) = rest.find(['{', '}']) {
            let tail = &rest[pos..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                rest = &tail[2..];
                continue;
            }
            if tail.starts_with('}') {
                return Err(PromptError::Template(format!("stray '}}' in line {line:?}")));
            }
            let end = tail
                .find('}')
                .ok_or_else(|| PromptError::Template(format!("unclosed '{{' in line {line:?}")))?;
            let name = &tail[1..end];
            if !is_placeholder_name(name) {
                return Err(PromptError::Template(format!("invalid placeholder {{{name}}}")));
            }
            names.push(name.to_string());
            rest = &tail[end + 1..];
        }
    }
    Ok(names)
}

fn if_condition(line: &str) -> Option<&str> {
    line.trim()
        .strip_prefix("{#if ")
        .and_then(|s| s.strip_suffix('}'))
        .map(str::trim)
}

fn is_placeholder_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('a'..='z')) && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

/// Renders `body`, then scans the output for brace-wrapped placeholder tokens that did
/// not come from an escaped literal.
pub fn render(body: &str, values: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len() * 2);
    let mut literal_spans: Vec<Range<usize>> = Vec::new();
    let mut skipping: Option<bool> = None;
    let mut first_line = true;

    for line in body.split('\n') {
        if let Some(cond) = if_condition(line) {
            if skipping.is_some() {
                return Err(PromptError::Template("nested {#if} block".into()));
            }
            let present = values.get(cond).is_some_and(|v| !v.trim().is_empty());
            skipping = Some(!present);
            continue;
        }
        if line.trim() == "{/if}" {
            if skipping.take().is_none() {
                return Err(PromptError::Template("{/if} without {#if}".into()));
            }
            continue;
        }
        if skipping == Some(true) {
            continue;
        }
        if !first_line {
            out.push('\n');
        }
        first_line = false;

        let mut rest = line;
        while let Some(pos) = rest.find(['{', '}']) {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if let Some(after) = tail.strip_prefix("{{") {
                // `{{inner}}` becomes the literal `{inner}`
                let start = out.len();
                match after.find("}}").filter(|&e| !after[..e].contains(['{', '}'])) {
                    Some(e) => {
                        out.push('{');
                        out.push_str(&after[..e]);
                        out.push('}');
                        rest = &after[e + 2..];
                    }
                    None => {
                        out.push('{');
                        rest = after;
                    }
                }
                literal_spans.push(start..out.len());
                continue;
            }
            if let Some(after) = tail.strip_prefix("}}") {
                out.push('}');
                rest = after;
                continue;
            }
            let end = tail
                .find('}')
                .filter(|_| tail.starts_with('{'))
                .ok_or_else(|| PromptError::Template(format!("unbalanced brace in line {line:?}")))?;
            let name = &tail[1..end];
            match values.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(PromptError::UnresolvedPlaceholder(format!("{{{name}}}"))),
            }
            rest = &tail[end + 1..];
        }
        out.push_str(rest);
    }
    if skipping.is_some() {
        return Err(PromptError::Template("unclosed {#if} block".into()));
    }
    if let Some(tok) = find_placeholder_outside(&out, &literal_spans) {
        return Err(PromptError::UnresolvedPlaceholder(tok));
    }
    Ok(out)
}

/// First `{snake_case}` token in `text`.
pub fn find_placeholder(text: &str) -> Option<String> {
    find_placeholder_outside(text, &[])
}

fn find_placeholder_outside(text: &str, literal: &[Range<usize>]) -> Option<String> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        if let Some(len) = text[start + 1..].find('}') {
            let name = &text[start + 1..start + 1 + len];
            let end = start + len + 2;
            let covered = literal.iter().any(|r| r.start <= start && end <= r.end);
            if is_placeholder_name(name) && !covered {
                return Some(text[start..end].to_string());
            }
        }
        i = start + 1;
        if i >= bytes.len() {
            break;
        }
    }
    None
}

#[derive(Debug, Deserialize, Serialize)]
struct Manifest {
    version: String,
    templates: Vec<ManifestEntry>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ManifestEntry {
    id: String,
    kind: TemplateKind,
    file: String,
}

/// Template id of the base forecaster prompt in the shipped library.
pub const FORECASTER_BASE: &str = "forecaster-base";
pub const REFINER: &str = "refiner";
pub const SYNTHESIS: &str = "synthesis";

macro_rules! builtin_files {
    ($($file:literal),* $(,)?) => {
        &[$(($file, include_str!(concat!("../../templates/v1/", $file)))),*]
    };
}

const BUILTIN_MANIFEST: &str = include_str!("../../templates/v1/manifest.json");
const BUILTIN_FILES: &[(&str, &str)] = builtin_files![
    "forecaster.txt",
    "refiner.txt",
    "synthesis.txt",
    "asp/simple.txt",
    "asp/deep-stl.txt",
    "asp/monte-hall.txt",
    "asp/teacher-student-loop.txt",
    "asp/self-verification-sets.txt",
    "asp/meta-prompt-conf-bands.txt",
    "asp/imaginary-python-repl.txt",
    "asp/synesthetic-soundtrack.txt",
    "asp/color-gradient-canvas.txt",
    "asp/dungeon-master.txt",
    "asp/micro-essay-poisson.txt",
    "asp/reverse-sudoku.txt",
    "asp/many-worlds-ensemble.txt",
    "asp/haiku-seeded.txt",
];

/// Immutable set of templates keyed by id.
#[derive(Debug, Clone)]
pub struct TemplateLibrary {
    version: String,
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateLibrary {
    /// The v1 library compiled into the binary.
    pub fn builtin() -> Self {
        Self::from_manifest(BUILTIN_MANIFEST, |file| {
            BUILTIN_FILES
                .iter()
                .find(|(name, _)| *name == file)
                .map(|(_, body)| body.to_string())
                .ok_or_else(|| PromptError::Template(format!("builtin file {file:?} missing")))
        })
        .expect("builtin template library is valid")
    }

    /// Loads `manifest.json` and the files it references from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| PromptError::Io(format!("{}: {e}", p.display())));
        let manifest = read(&dir.join("manifest.json"))?;
        Self::from_manifest(&manifest, |file| read(&dir.join(file)))
    }

    fn from_manifest(
        manifest: &str,
        mut read: impl FnMut(&str) -> Result<String, PromptError>,
    ) -> Result<Self, PromptError> {
        let manifest: Manifest =
            serde_json::from_str(manifest).map_err(|e| PromptError::Template(format!("manifest: {e}")))?;
        let mut templates = BTreeMap::new();
        for entry in manifest.templates {
            let body = read(&entry.file)?;
            let body = body.strip_suffix('\n').unwrap_or(&body).to_string();
            let t = PromptTemplate::new(entry.id.clone(), entry.kind, body)?;
            templates.insert(entry.id, t);
        }
        let lib = Self {
            version: manifest.version,
            templates,
        };
        for (id, kind) in [
            (FORECASTER_BASE, TemplateKind::ForecasterBase),
            (REFINER, TemplateKind::Refiner),
            (SYNTHESIS, TemplateKind::Synthesis),
        ] {
            match lib.templates.get(id) {
                Some(t) if t.kind == kind => {}
                _ => return Err(PromptError::Template(format!("library lacks required template {id:?}"))),
            }
        }
        Ok(lib)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(id).ok_or_else(|| PromptError::UnknownTemplate {
            name: id.to_string(),
            available: self.templates.keys().cloned().collect::<Vec<_>>().join(", "),
        })
    }

    pub fn get_asp(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        match self.templates.get(name) {
            Some(t) if t.kind == TemplateKind::AspStrategy => Ok(t),
            _ => Err(PromptError::UnknownTemplate {
                name: name.to_string(),
                available: self.list_asps().join(", "),
            }),
        }
    }

    pub fn list_asps(&self) -> Vec<String> {
        self.templates
            .values()
            .filter(|t| t.kind == TemplateKind::AspStrategy)
            .map(|t| t.id.clone())
            .collect()
    }
}
