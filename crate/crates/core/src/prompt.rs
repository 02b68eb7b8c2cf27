//! Seven-element prompt layout.
//!
//! Every participant-side provider request is built from a [`PromptBundle`].
//! Populated elements are rendered in a fixed order, each under a literal
//! `## <Element Name>` header line; empty elements are left out.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Element {
    Background,
    DialogueHistory,
    ViolationLog,
    Regulations,
    Guidance,
    Plan,
    Instructions,
}

impl Element {
    pub const ORDER: [Element; 7] = [
        Element::Background,
        Element::DialogueHistory,
        Element::ViolationLog,
        Element::Regulations,
        Element::Guidance,
        Element::Plan,
        Element::Instructions,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Element::Background => "Background Information",
            Element::DialogueHistory => "Dialogue History",
            Element::ViolationLog => "Violation Log",
            Element::Regulations => "Regulations",
            Element::Guidance => "Guidance",
            Element::Plan => "Plan",
            Element::Instructions => "Instructions",
        }
    }

    pub fn header(self) -> String {
        format!("## {}", self.title())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub background: String,
    pub dialogue_history: Option<String>,
    pub violation_log: Option<String>,
    pub regulations: Option<String>,
    pub guidance: Option<String>,
    pub plan: Option<String>,
    pub instructions: String,
}

impl PromptBundle {
    pub fn new(background: impl Into<String>, instructions: impl Into<String>) -> Self {
        Self { background: background.into(), instructions: instructions.into(), ..Self::default() }
    }

    pub fn with_dialogue_history(mut self, text: impl Into<String>) -> Self {
        self.dialogue_history = Some(text.into());
        self
    }

    pub fn with_violation_log(mut self, text: impl Into<String>) -> Self {
        self.violation_log = Some(text.into());
        self
    }

    pub fn with_regulations(mut self, text: impl Into<String>) -> Self {
        self.regulations = Some(text.into());
        self
    }

    pub fn with_guidance(mut self, text: impl Into<String>) -> Self {
        self.guidance = Some(text.into());
        self
    }

    pub fn with_plan(mut self, text: impl Into<String>) -> Self {
        self.plan = Some(text.into());
        self
    }

    pub fn get(&self, element: Element) -> Option<&str> {
        let value = match element {
            Element::Background => Some(self.background.as_str()),
            Element::DialogueHistory => self.dialogue_history.as_deref(),
            Element::ViolationLog => self.violation_log.as_deref(),
            Element::Regulations => self.regulations.as_deref(),
            Element::Guidance => self.guidance.as_deref(),
            Element::Plan => self.plan.as_deref(),
            Element::Instructions => Some(self.instructions.as_str()),
        };
        value.filter(|v| !v.is_empty())
    }
}

/// Serializes a bundle. Pure: equal bundles give byte-identical text.
pub fn assemble_prompt(bundle: &PromptBundle) -> Result<String, CoreError> {
    if bundle.background.trim().is_empty() {
        return Err(CoreError::InvalidBundle("background is empty".into()));
    }
    if bundle.instructions.trim().is_empty() {
        return Err(CoreError::InvalidBundle("instructions are empty".into()));
    }
    Ok(render_sections(Element::ORDER.iter().filter_map(|&e| bundle.get(e).map(|v| (e, v)))))
}

/// Renders `(element, content)` pairs in the order given. Used directly for
/// prompts that are not participant bundles (the supervisor and the judge).
pub fn render_sections<'a>(sections: impl IntoIterator<Item = (Element, &'a str)>) -> String {
    sections
        .into_iter()
        .map(|(e, content)| format!("{}\n{}", e.header(), escape_content(content)))
        .collect::<Vec<_>>()
        .join("\n\n")
}

// Content lines that look like a header (or start with the escape char) get a
// leading backslash, so section boundaries stay unambiguous.
fn escape_content(content: &str) -> String {
    if !content.lines().any(needs_escape) {
        return content.to_string();
    }
    content
        .split('\n')
        .map(|line| if needs_escape(line) { format!("\\{line}") } else { line.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

fn needs_escape(line: &str) -> bool {
    line.starts_with("## ") || line.starts_with('\\')
}
