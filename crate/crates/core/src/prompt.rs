//! Prompt rendering in the three instruction styles.

use serde::{Deserialize, Serialize};

use crate::context::{BaselineContext, HeuristicPayload};
use crate::method::{HeuristicKind, Method, PromptStyle};
use crate::tokenizer::Tokenizer;

pub const BUGGY_LINE_TAG: &str = "<BUGGY_LINE>";
pub const FILL_ME: &str = "<FILL_ME>";

const SYSTEM_HEAD: &str = "You are a helpful and honest code assistant expert in fixing the buggy code in Python. I mined a buggy code snippet and its related information from GitHub. I will provide you with the project name, buggy file name, buggy function name, the date time, the current version of this buggy code snippet, the corresponding bug description that might indicate how this buggy code should be fixed, and the buggy line content that might suggest where this buggy code should be fixed. Please only generate the fixed code snippet of this buggy code, don't explain any other things.";
const SYSTEM_TAIL: &str = "Please wrap your fixed code snippet between ```python and ```";
const LABEL_SENTENCE: &str = "The buggy line is labeled with a tag at the start of that line in the buggy code snippet, remove the tag in your fixed code snippet.";
const MASK_SENTENCE: &str = "The buggy line is masked with a placeholder in the buggy code snippet, replace the placeholder with the fixed line in your fixed code snippet.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("buggy line {content:?} not found in function {function}")]
    BuggyLineNotFound { function: String, content: String },
    #[error("line offset {offset} outside code of {len} lines")]
    OffsetOutOfRange { offset: usize, len: usize },
    #[error("line {offset} does not carry the expected marker")]
    NotMarked { offset: usize },
    #[error("{0} payload does not match its kind")]
    InconsistentPayload(HeuristicKind),
    #[error("context already contains the reserved marker {0}")]
    ReservedMarker(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub input_token_count: usize,
    pub style: PromptStyle,
    pub heuristic: Method,
}

pub fn system_prompt(style: PromptStyle) -> String {
    match style {
        PromptStyle::Instruction => format!("{SYSTEM_HEAD}  {SYSTEM_TAIL}"),
        PromptStyle::InstructionLabel => format!("{SYSTEM_HEAD} {LABEL_SENTENCE}  {SYSTEM_TAIL}"),
        PromptStyle::InstructionMask => format!("{SYSTEM_HEAD} {MASK_SENTENCE}  {SYSTEM_TAIL}"),
    }
}

fn split_indent(line: &str) -> (&str, &str) {
    let body = line.trim_start_matches([' ', '\t']);
    line.split_at(line.len() - body.len())
}

fn edit_line(
    code: &str,
    offset: usize,
    edit: impl FnOnce(&str) -> Result<String, PromptError>,
) -> Result<String, PromptError> {
    let mut lines: Vec<&str> = code.split('\n').collect();
    let len = lines.len();
    let Some(line) = lines.get(offset) else {
        return Err(PromptError::OffsetOutOfRange { offset, len });
    };
    let replaced = edit(line)?;
    lines[offset] = &replaced;
    Ok(lines.join("\n"))
}

/// Put the tag between the indentation and the body of line `offset` (0-based).
pub fn label_buggy_line(code: &str, offset: usize) -> Result<String, PromptError> {
    edit_line(code, offset, |line| {
        let (indent, body) = split_indent(line);
        Ok(format!("{indent}{BUGGY_LINE_TAG}{body}"))
    })
}

/// Inverse of [`label_buggy_line`].
pub fn unlabel_buggy_line(code: &str, offset: usize) -> Result<String, PromptError> {
    edit_line(code, offset, |line| {
        let (indent, body) = split_indent(line);
        match body.strip_prefix(BUGGY_LINE_TAG) {
            Some(rest) => Ok(format!("{indent}{rest}")),
            None => Err(PromptError::NotMarked { offset }),
        }
    })
}

/// Replace the body of line `offset` by the placeholder, keeping its indentation.
pub fn mask_buggy_line(code: &str, offset: usize) -> Result<String, PromptError> {
    edit_line(code, offset, |line| Ok(format!("{}{FILL_ME}", split_indent(line).0)))
}

/// Put `original` back in place of a masked line.
pub fn unmask_buggy_line(code: &str, offset: usize, original: &str) -> Result<String, PromptError> {
    edit_line(code, offset, |line| {
        if split_indent(line).1 == FILL_ME {
            Ok(original.to_string())
        } else {
            Err(PromptError::NotMarked { offset })
        }
    })
}

fn fenced(lang: &str, body: &str) -> String {
    let body = body.trim_end_matches('\n');
    if body.is_empty() {
        format!("```{lang}\n```\n")
    } else {
        format!("```{lang}\n{body}\n```\n")
    }
}

/// Header line for each heuristic section.
pub fn heuristic_header(kind: HeuristicKind) -> &'static str {
    match kind {
        HeuristicKind::CfnModified => "# The co-evolved functions' names in the modified buggy file:",
        HeuristicKind::CfnAll => "# The co-evolved functions' names in all modified files:",
        HeuristicKind::FnModified => "# The names of all functions in the modified buggy file:",
        HeuristicKind::FnAll => "# The names of all functions in all modified files:",
        HeuristicKind::FlnAll => "# The co-evolved files' names:",
        HeuristicKind::FnPair => "# The function code before the blame commit:",
        HeuristicKind::FlDiff => "# The file diff patch of the blame commit:",
    }
}

const FN_PAIR_AFTER_HEADER: &str = "# The function code after the blame commit:";

/// Bare function names (`Worker.run` becomes `run`), first occurrence kept.
fn unqualified(names: &[String]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for n in names {
        let tail = n.rsplit('.').next().unwrap_or(n);
        if !out.contains(&tail) {
            out.push(tail);
        }
    }
    out
}

/// The appended heuristic block, newline-terminated.
pub fn heuristic_section(payload: &HeuristicPayload) -> Result<String, PromptError> {
    if !payload.is_consistent() {
        return Err(PromptError::InconsistentPayload(payload.kind));
    }
    let header = heuristic_header(payload.kind);
    Ok(match payload.kind {
        HeuristicKind::FnPair => {
            let pair = payload.code_pair.as_ref().expect("consistent payload");
            format!(
                "{header}\n{}{FN_PAIR_AFTER_HEADER}\n{}",
                fenced("python", &pair.before),
                fenced("python", &pair.after)
            )
        }
        HeuristicKind::FlDiff => {
            let diff = payload.diff.as_ref().expect("consistent payload");
            format!("{header}\n{}", fenced("diff", &diff.text))
        }
        HeuristicKind::FlnAll => {
            let paths = payload.names.as_ref().expect("consistent payload");
            format!("{header} {}\n", paths.join(", "))
        }
        _ => {
            let names = payload.names.as_ref().expect("consistent payload");
            format!("{header} {}\n", unqualified(names).join(", "))
        }
    })
}

/// Render one prompt. The heuristic section sits between the bug description
/// and the buggy line content so the fixed-code cue stays last.
pub fn render_prompt(
    ctx: &BaselineContext,
    payload: Option<&HeuristicPayload>,
    style: PromptStyle,
    tokenizer: &dyn Tokenizer,
) -> Result<RenderedPrompt, PromptError> {
    let code = ctx.function_code_before.trim_end_matches('\n');
    let code = match style {
        PromptStyle::Instruction => code.to_string(),
        PromptStyle::InstructionLabel | PromptStyle::InstructionMask => {
            let marker = if style == PromptStyle::InstructionLabel { BUGGY_LINE_TAG } else { FILL_ME };
            let mut fields = vec![code, &ctx.bug_description, &ctx.buggy_line_content];
            if let Some(p) = payload {
                fields.extend(p.names.iter().flatten().map(String::as_str));
                fields.extend(p.code_pair.iter().flat_map(|c| [c.before.as_str(), c.after.as_str()]));
                fields.extend(p.diff.iter().map(|d| d.text.as_str()));
            }
            if fields.iter().any(|f| f.contains(marker)) {
                return Err(PromptError::ReservedMarker(marker));
            }
            let offset = ctx.buggy_line_offset().ok_or_else(|| PromptError::BuggyLineNotFound {
                function: ctx.function_name.clone(),
                content: ctx.buggy_line_content.clone(),
            })?;
            if style == PromptStyle::InstructionLabel {
                label_buggy_line(code, offset)?
            } else {
                mask_buggy_line(code, offset)?
            }
        }
    };
    let section = payload.map(heuristic_section).transpose()?.unwrap_or_default();
    let text = format!(
        "<s>[INST] <<SYS>>\n{system}\n<</SYS>>\n\
         # The project name: {project}\n\
         # The buggy file name: {file}\n\
         # The buggy function name: {function}\n\
         # The buggy code snippet:\n\
         {code_block}\
         # The bug description: {description}\n\
         {section}\
         # The buggy line content: {line}\n\
         # The fixed code snippet:\n\
         [/INST]",
        system = system_prompt(style),
        project = ctx.project_name,
        file = ctx.file_name,
        function = ctx.function_name,
        code_block = fenced("python", &code),
        description = ctx.bug_description,
        line = ctx.buggy_line_content.trim(),
    );
    Ok(RenderedPrompt {
        input_token_count: tokenizer.count(&text),
        text,
        style,
        heuristic: payload.map_or(Method::Baseline, |p| p.kind.into()),
    })
}
