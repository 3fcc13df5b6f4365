//! Prompt layout shared by the pipeline, the miner and the offline backend.
//!
//! Requests carry labelled sections (`### Task`, `### Current code`, ...)
//! so that any backend, including the rule-based offline one, can find its
//! inputs. The system prompts are generic placeholders.

use crate::graph::SourceFile;

pub const ROLE_PROGRAMMER: &str = "programmer";
pub const ROLE_REVIEWER: &str = "reviewer";
pub const ROLE_SYNTHESIZER: &str = "synthesizer";

/// Reviewer reply marking that no further changes are needed.
pub const COMPLETION_MARKER: &str = "<INFO> Finished";

/// Instruction stored for a shortcut whose source and target are identical.
pub const NO_CHANGE_SENTINEL: &str = "no change required";

pub const SECTION_TASK: &str = "### Task";
pub const SECTION_CODE: &str = "### Current code";
pub const SECTION_SHORTCUT: &str = "### Reference shortcut";
pub const SECTION_COMMENTS: &str = "### Review comments";
pub const SECTION_SOURCE: &str = "### Source version";
pub const SECTION_TARGET: &str = "### Target version";
pub const SECTION_STEPS: &str = "### Intervening instructions";

pub const PROGRAMMER_SYSTEM: &str = "You are a programmer. Implement the task. Reply with every source \
file as a line holding its file name followed by a fenced code block with the full file.";

pub const REVIEWER_SYSTEM: &str = "You are a code reviewer. Read the task and the current code and give \
concrete review comments as a bulleted list. If a reference shortcut is supplied, adapt its advice to \
this code. If nothing remains to be done, reply exactly `<INFO> Finished`.";

pub const SYNTHESIZER_SYSTEM: &str = "You summarize how a program evolved. Given a source \
version, a target version and the instructions applied in between, write one self-contained \
instruction that takes the source directly to the target.";

/// Builds a message body out of labelled sections, skipping absent ones.
pub fn sections<'a>(parts: impl IntoIterator<Item = (&'a str, Option<&'a str>)>) -> String {
    let mut out = String::new();
    for (label, body) in parts {
        if let Some(body) = body {
            out.push_str(label);
            out.push('\n');
            out.push_str(body.trim_end());
            out.push_str("\n\n");
        }
    }
    out
}

/// Returns the body of the section starting with `label`, up to the next `### ` header.
pub fn section<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let start = text.find(label)? + label.len();
    let rest = &text[start..];
    let rest = rest.strip_prefix('\n').unwrap_or(rest);
    let end = rest.find("\n### ").map(|i| i + 1).unwrap_or(rest.len());
    Some(rest[..end].trim_end())
}

/// Renders files in the reply format the programmer is asked to use.
pub fn render_files(files: &[SourceFile]) -> String {
    let mut out = String::new();
    for f in files {
        let lang = f.path.rsplit('.').next().unwrap_or("");
        out.push_str(&f.path);
        out.push_str("\n```");
        out.push_str(lang);
        out.push('\n');
        out.push_str(f.body.trim_end_matches('\n'));
        out.push_str("\n```\n\n");
    }
    out
}

fn looks_like_file_name(line: &str) -> Option<String> {
    let cleaned = line
        .trim()
        .trim_matches(|c: char| c == '*' || c == '`' || c == '#' || c == ':' || c.is_whitespace());
    let ok = !cleaned.is_empty()
        && cleaned.contains('.')
        && !cleaned.starts_with('.')
        && cleaned
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '/'))
        && !cleaned.contains("..");
    ok.then(|| cleaned.to_string())
}

/// Extracts fenced code blocks as files. A block is named by the closest
/// preceding line that looks like a file name; unnamed blocks fall back to
/// `default_name`, then `file{n}` with the default's extension.
pub fn parse_files(reply: &str, default_name: &str) -> Vec<SourceFile> {
    let mut files: Vec<SourceFile> = Vec::new();
    let mut pending_name: Option<String> = None;
    let mut lines = reply.lines();
    while let Some(line) = lines.next() {
        if line.trim_start().starts_with("```") {
            let mut body = String::new();
            for inner in lines.by_ref() {
                if inner.trim_start().starts_with("```") {
                    break;
                }
                body.push_str(inner);
                body.push('\n');
            }
            let name = pending_name.take().unwrap_or_else(|| {
                if files.iter().any(|f| f.path == default_name) {
                    let ext = default_name.rsplit('.').next().unwrap_or("txt");
                    format!("file{}.{ext}", files.len() + 1)
                } else {
                    default_name.to_string()
                }
            });
            match files.iter_mut().find(|f| f.path == name) {
                Some(existing) => existing.body = body,
                None => files.push(SourceFile::new(name, body)),
            }
        } else if !line.trim().is_empty() {
            pending_name = looks_like_file_name(line);
        }
    }
    files
}

pub fn signals_completion(reply: &str) -> bool {
    reply.contains(COMPLETION_MARKER)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_round_trip() {
        let text = sections([
            (SECTION_TASK, Some("make a clock")),
            (SECTION_CODE, Some("print(1)\nprint(2)")),
            (SECTION_SHORTCUT, None),
            (SECTION_COMMENTS, Some("- add alarm")),
        ]);
        assert_eq!(section(&text, SECTION_TASK), Some("make a clock"));
        assert_eq!(section(&text, SECTION_CODE), Some("print(1)\nprint(2)"));
        assert_eq!(section(&text, SECTION_SHORTCUT), None);
        assert_eq!(section(&text, SECTION_COMMENTS), Some("- add alarm"));
    }

    #[test]
    fn parses_named_blocks() {
        let reply = "Here you go.\n\nmain.py\n```python\nprint('a')\n```\n\n**utils/io.py**\n```python\nX = 1\n```\n";
        let files = parse_files(reply, "main.py");
        assert_eq!(files.len(), 2);
        assert_eq!(files[0], SourceFile::new("main.py", "print('a')\n"));
        assert_eq!(files[1], SourceFile::new("utils/io.py", "X = 1\n"));
    }

    #[test]
    fn unnamed_blocks_get_defaults() {
        let files = parse_files("```\na\n```\ntext\n```\nb\n```", "main.py");
        assert_eq!(files[0].path, "main.py");
        assert_eq!(files[1].path, "file2.py");
    }

    #[test]
    fn render_then_parse_is_identity() {
        let files = vec![
            SourceFile::new("main.py", "import game\ngame.run()\n"),
            SourceFile::new("game.py", "def run():\n    pass\n"),
        ];
        assert_eq!(parse_files(&render_files(&files), "main.py"), files);
    }

    #[test]
    fn completion_marker() {
        assert!(signals_completion("<INFO> Finished"));
        assert!(!signals_completion("- fix the loop"));
    }
}
