//! Rule-based offline agents.
//!
//! The task text is read as a list of required features (its content
//! words). The programmer writes one Python function per feature it has
//! been asked to implement; the reviewer asks for missing features, one per
//! round, or as many as a supplied reference shortcut lists. Usage is
//! derived from prompt and reply sizes, so runs are fully deterministic and
//! longer prompts cost more.

use std::collections::BTreeSet;

use crate::backend::{count_tokens_fallback, AgentBackend, AgentReply, AgentRequest};
use crate::embed::tokenize;
use crate::error::Result;
use crate::graph::{ResourceDelta, SourceFile};
use crate::prompt::{self, ROLE_PROGRAMMER, ROLE_REVIEWER, ROLE_SYNTHESIZER};

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "with", "that", "this", "from", "into", "app", "application", "program",
    "software", "tool", "user", "users", "allows", "allow", "which", "should", "can", "will",
    "their", "your", "are", "its", "using", "use", "simple", "basic",
];

const FEATURE_PREFIX: &str = "feature_";
const IMPLEMENT: &str = "implement feature_";

#[derive(Debug, Clone, Copy)]
pub struct SimulatedBackend {
    pub base_latency_seconds: f64,
    pub seconds_per_token: f64,
    pub max_features: usize,
}

impl Default for SimulatedBackend {
    fn default() -> Self {
        SimulatedBackend {
            base_latency_seconds: 0.25,
            seconds_per_token: 0.002,
            max_features: 8,
        }
    }
}

impl SimulatedBackend {
    /// Content words of the task, in order of first appearance.
    pub fn required_features(&self, task: &str) -> Vec<String> {
        let mut seen = BTreeSet::new();
        tokenize(task)
            .map(|t| t.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>())
            .filter(|t| t.len() >= 3 && !STOPWORDS.contains(&t.as_str()))
            .filter(|t| t.chars().next().is_some_and(|c| c.is_ascii_alphabetic()))
            .filter(|t| seen.insert(t.clone()))
            .take(self.max_features)
            .collect()
    }

    fn usage(&self, request: &AgentRequest, reply: &str) -> ResourceDelta {
        let tokens = count_tokens_fallback(&request.prompt_text()) + count_tokens_fallback(reply);
        ResourceDelta {
            time_seconds: self.base_latency_seconds + tokens as f64 * self.seconds_per_token,
            tokens,
        }
    }

    fn program(&self, request: &AgentRequest) -> String {
        let body = body_text(request);
        let task = prompt::section(&body, prompt::SECTION_TASK).unwrap_or("");
        let code = prompt::section(&body, prompt::SECTION_CODE).unwrap_or("");
        let comments = prompt::section(&body, prompt::SECTION_COMMENTS).unwrap_or("");

        let mut features = implemented_features(code);
        let requested = requested_features(comments);
        if features.is_empty() && requested.is_empty() {
            features.extend(self.required_features(task).into_iter().take(1));
        }
        for f in requested {
            if !features.contains(&f) {
                features.push(f);
            }
        }
        let title = task.lines().next().unwrap_or("program").replace('"', "'");
        let mut src = format!("\"\"\"{title}\"\"\"\n\n");
        for f in &features {
            src.push_str(&format!(
                "\ndef {FEATURE_PREFIX}{f}():\n    \"\"\"{f}\"\"\"\n    return \"{f}\", \"{f}\"\n\n"
            ));
        }
        src.push_str("\ndef main():\n    done = [");
        src.push_str(
            &features
                .iter()
                .map(|f| format!("{FEATURE_PREFIX}{f}()"))
                .collect::<Vec<_>>()
                .join(", "),
        );
        src.push_str("]\n    print(len(done), \"features ready\")\n\n\nif __name__ == \"__main__\":\n    main()\n");
        prompt::render_files(&[SourceFile::new("main.py", src)])
    }

    fn review(&self, request: &AgentRequest) -> String {
        let body = body_text(request);
        let task = prompt::section(&body, prompt::SECTION_TASK).unwrap_or("");
        let code = prompt::section(&body, prompt::SECTION_CODE).unwrap_or("");
        let shortcut = prompt::section(&body, prompt::SECTION_SHORTCUT);

        let done = implemented_features(code);
        let missing: Vec<String> = self
            .required_features(task)
            .into_iter()
            .filter(|f| !done.contains(f))
            .collect();
        if missing.is_empty() {
            return match shortcut {
                None => prompt::COMPLETION_MARKER.to_string(),
                Some(_) => "- keep the current structure; no functional changes needed".to_string(),
            };
        }
        let batch = shortcut.map_or(1, |s| s.matches(IMPLEMENT).count().max(1));
        missing
            .iter()
            .take(batch)
            .map(|f| format!("- {IMPLEMENT}{f}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn synthesize(&self, request: &AgentRequest) -> String {
        let body = body_text(request);
        let source = prompt::section(&body, prompt::SECTION_SOURCE).unwrap_or("");
        let target = prompt::section(&body, prompt::SECTION_TARGET).unwrap_or("");
        let steps = prompt::section(&body, prompt::SECTION_STEPS).unwrap_or("");
        let before: BTreeSet<&str> = source.lines().collect();
        let after: BTreeSet<&str> = target.lines().collect();
        let added = after.difference(&before).count();
        let removed = before.difference(&after).count();
        let mut out = String::from(
            "To transition from version {i} to version {j}, apply these changes together:\n",
        );
        for line in steps.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if line.starts_with('-') {
                out.push_str(line);
            } else {
                out.push_str("- ");
                out.push_str(line);
            }
            out.push('\n');
        }
        out.push_str(&format!("Resulting change: +{added} / -{removed} lines"));
        out
    }
}

fn body_text(request: &AgentRequest) -> String {
    request
        .messages
        .iter()
        .map(|m| m.text.as_str())
        .collect::<Vec<_>>()
        .join("\n")
}

fn implemented_features(code: &str) -> Vec<String> {
    code.lines()
        .filter_map(|l| l.trim_start().strip_prefix("def "))
        .filter_map(|l| l.strip_prefix(FEATURE_PREFIX))
        .filter_map(|l| l.split('(').next())
        .map(str::to_string)
        .collect()
}

fn requested_features(comments: &str) -> Vec<String> {
    comments
        .lines()
        .filter_map(|l| l.find(IMPLEMENT).map(|at| &l[at + IMPLEMENT.len()..]))
        .map(|rest| {
            rest.chars()
                .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                .collect::<String>()
        })
        .filter(|f| !f.is_empty())
        .collect()
}

impl AgentBackend for SimulatedBackend {
    fn complete(&self, request: &AgentRequest) -> Result<AgentReply> {
        let text = match request.role_profile.as_str() {
            ROLE_PROGRAMMER => self.program(request),
            ROLE_REVIEWER => self.review(request),
            ROLE_SYNTHESIZER => self.synthesize(request),
            _ => "ok".to_string(),
        };
        let usage = self.usage(request, &text);
        Ok(AgentReply { text, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{sections, PROGRAMMER_SYSTEM, REVIEWER_SYSTEM};

    fn programmer(task: &str, code: Option<&str>, comments: Option<&str>) -> AgentRequest {
        AgentRequest::new(
            ROLE_PROGRAMMER,
            PROGRAMMER_SYSTEM,
            sections([
                (prompt::SECTION_TASK, Some(task)),
                (prompt::SECTION_CODE, code),
                (prompt::SECTION_COMMENTS, comments),
            ]),
        )
    }

    fn reviewer(task: &str, code: &str, shortcut: Option<&str>) -> AgentRequest {
        AgentRequest::new(
            ROLE_REVIEWER,
            REVIEWER_SYSTEM,
            sections([
                (prompt::SECTION_TASK, Some(task)),
                (prompt::SECTION_CODE, Some(code)),
                (prompt::SECTION_SHORTCUT, shortcut),
            ]),
        )
    }

    const TASK: &str = "Photo defogger with haze removal and contrast boost";

    #[test]
    fn features_skip_stopwords_and_duplicates() {
        let b = SimulatedBackend::default();
        assert_eq!(
            b.required_features(TASK),
            vec!["photo", "defogger", "haze", "removal", "contrast", "boost"]
        );
    }

    #[test]
    fn chain_converges_one_feature_per_round_without_shortcuts() {
        let b = SimulatedBackend::default();
        let first = b.complete(&programmer(TASK, None, None)).unwrap();
        let files = prompt::parse_files(&first.text, "main.py");
        assert_eq!(implemented_features(&files[0].body), vec!["photo"]);
        let mut code = files[0].body.clone();
        let mut rounds = 0;
        loop {
            let review = b.complete(&reviewer(TASK, &code, None)).unwrap();
            if prompt::signals_completion(&review.text) {
                break;
            }
            assert_eq!(review.text.lines().count(), 1);
            let next = b.complete(&programmer(TASK, Some(&code), Some(&review.text))).unwrap();
            code = prompt::parse_files(&next.text, "main.py")[0].body.clone();
            rounds += 1;
        }
        assert_eq!(rounds, 5);
    }

    #[test]
    fn shortcut_widens_review_batch() {
        let b = SimulatedBackend::default();
        let code = prompt::parse_files(&b.complete(&programmer(TASK, None, None)).unwrap().text, "main.py")[0]
            .body
            .clone();
        let shortcut = "- implement feature_a\n- implement feature_b\n- implement feature_c";
        let review = b.complete(&reviewer(TASK, &code, Some(shortcut))).unwrap();
        assert_eq!(review.text.matches(IMPLEMENT).count(), 3);
    }

    #[test]
    fn usage_grows_with_prompt() {
        let b = SimulatedBackend::default();
        let short = b.complete(&reviewer(TASK, "", None)).unwrap();
        let long = b
            .complete(&reviewer(TASK, "", Some(&"- implement feature_x word ".repeat(200))))
            .unwrap();
        assert!(long.usage.tokens > short.usage.tokens);
        assert!(long.usage.time_seconds > short.usage.time_seconds);
    }

    #[test]
    fn generated_program_is_valid_python() {
        let b = SimulatedBackend::default();
        let reply = b.complete(&programmer(TASK, None, None)).unwrap();
        let files = prompt::parse_files(&reply.text, "main.py");
        let out = std::process::Command::new("python3")
            .arg("-c")
            .arg(&files[0].body)
            .output()
            .expect("python3 available");
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }

    #[test]
    fn replies_are_deterministic() {
        let b = SimulatedBackend::default();
        let r = programmer(TASK, None, None);
        assert_eq!(b.complete(&r).unwrap(), b.complete(&r).unwrap());
    }
}
