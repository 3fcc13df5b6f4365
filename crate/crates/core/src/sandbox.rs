//! Compilability checks for candidate solutions.
//!
//! Files are written into a fresh temporary directory and the profile's
//! check command runs there with a scrubbed environment and a timeout. A
//! solution counts as compilable iff the command exits 0 before the timeout.

use std::io::Read;
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, Result};
use crate::graph::SolutionState;

const DIAGNOSTIC_LIMIT: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionVerdict {
    pub compilable: bool,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub diagnostics: String,
    pub wall_time_seconds: f64,
}

impl ExecutionVerdict {
    fn rejected(diagnostics: &str) -> Self {
        ExecutionVerdict {
            compilable: false,
            exit_code: None,
            timed_out: false,
            diagnostics: diagnostics.to_string(),
            wall_time_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub name: String,
    /// Whitespace-separated command; `{entry}` is replaced by the entry file path.
    pub check_command: String,
    pub timeout_seconds: f64,
    /// File run when the solution has one named like this; otherwise the first file.
    pub entry_file: String,
    /// Line-comment prefix, used when counting lines of code.
    pub comment_prefix: String,
}

impl LanguageProfile {
    /// Runs the entry file with `python3`.
    pub fn python() -> Self {
        LanguageProfile {
            name: "python".into(),
            check_command: "python3 {entry}".into(),
            timeout_seconds: 10.0,
            entry_file: "main.py".into(),
            comment_prefix: "#".into(),
        }
    }

    /// Byte-compiles the entry file without running it.
    pub fn python_compile_only() -> Self {
        LanguageProfile {
            name: "python-compile".into(),
            check_command: "python3 -m py_compile {entry}".into(),
            ..LanguageProfile::python()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "python" => Some(Self::python()),
            "python-compile" => Some(Self::python_compile_only()),
            _ => None,
        }
    }

    pub fn with_timeout(mut self, seconds: f64) -> Self {
        self.timeout_seconds = seconds;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_seconds.is_finite() && self.timeout_seconds > 0.0) {
            return Err(Error::Configuration(format!(
                "timeout must be positive and finite, got {}",
                self.timeout_seconds
            )));
        }
        if self.check_command.split_whitespace().next().is_none() {
            return Err(Error::Configuration("check command is empty".into()));
        }
        Ok(())
    }
}

impl Default for LanguageProfile {
    fn default() -> Self {
        Self::python()
    }
}

/// Anything that can decide `[[s_j]]` for a solution.
pub trait CompileCheck: Send + Sync {
    fn check(&self, solution: &SolutionState) -> Result<ExecutionVerdict>;
}

impl<C: CompileCheck + ?Sized> CompileCheck for &C {
    fn check(&self, solution: &SolutionState) -> Result<ExecutionVerdict> {
        (**self).check(solution)
    }
}

#[derive(Debug, Clone)]
pub struct Sandbox {
    pub profile: LanguageProfile,
    /// Parent directory for per-check temp dirs; the system temp dir when unset.
    pub work_root: Option<PathBuf>,
    /// Variables passed through besides `PATH`.
    pub env_whitelist: Vec<String>,
}

impl Sandbox {
    pub fn new(profile: LanguageProfile) -> Result<Self> {
        profile.validate()?;
        Ok(Sandbox {
            profile,
            work_root: None,
            env_whitelist: Vec::new(),
        })
    }

    pub fn with_work_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.work_root = Some(root.into());
        self
    }

    pub fn check_compilable(&self, solution: &SolutionState) -> Result<ExecutionVerdict> {
        let owned;
        let files = if solution.files.is_empty() {
            if solution.content.trim().is_empty() {
                return Ok(ExecutionVerdict::rejected("empty solution"));
            }
            owned = vec![(self.profile.entry_file.clone(), solution.content.clone())];
            &owned
        } else {
            owned = solution
                .files
                .iter()
                .map(|f| (f.path.clone(), f.body.clone()))
                .collect();
            &owned
        };
        for (path, _) in files {
            if !is_safe_relative(Path::new(path)) {
                return Err(Error::invalid(format!("unsafe solution path `{path}`")));
            }
        }

        let dir = match &self.work_root {
            Some(root) => tempfile::Builder::new()
                .prefix("chainshort-")
                .tempdir_in(root)?,
            None => tempfile::Builder::new().prefix("chainshort-").tempdir()?,
        };
        for (path, body) in files {
            let target = dir.path().join(path);
            if let Some(parent) = target.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&target, body)?;
        }
        let entry = files
            .iter()
            .find(|(p, _)| *p == self.profile.entry_file)
            .unwrap_or(&files[0])
            .0
            .clone();
        let verdict = self.run_in(dir.path(), &entry);
        dir.close()?;
        verdict
    }

    fn run_in(&self, dir: &Path, entry: &str) -> Result<ExecutionVerdict> {
        let mut parts = self
            .profile
            .check_command
            .split_whitespace()
            .map(|p| p.replace("{entry}", entry));
        let program = parts.next().expect("validated non-empty");
        let mut cmd = Command::new(&program);
        cmd.args(parts)
            .current_dir(dir)
            .env_clear()
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        if let Ok(path) = std::env::var("PATH") {
            cmd.env("PATH", path);
        }
        for key in &self.env_whitelist {
            if let Ok(v) = std::env::var(key) {
                cmd.env(key, v);
            }
        }

        let started = Instant::now();
        let mut child = cmd.spawn().map_err(|e| {
            Error::Environment(format!("cannot start `{program}`: {e}"))
        })?;
        let stdout = drain(child.stdout.take());
        let stderr = drain(child.stderr.take());
        let timeout = Duration::from_secs_f64(self.profile.timeout_seconds);
        let status = child.wait_timeout(timeout)?;
        let (exit_code, timed_out) = match status {
            Some(s) => (s.code(), false),
            None => {
                let _ = child.kill();
                child.wait()?;
                (None, true)
            }
        };
        let wall_time_seconds = started.elapsed().as_secs_f64();
        let _ = stdout.join();
        let err_text = stderr.join().unwrap_or_default();
        let diagnostics = if timed_out {
            format!("timed out after {}s", self.profile.timeout_seconds)
        } else {
            err_text
        };
        Ok(ExecutionVerdict {
            compilable: !timed_out && exit_code == Some(0),
            exit_code,
            timed_out,
            diagnostics,
            wall_time_seconds,
        })
    }
}

impl CompileCheck for Sandbox {
    fn check(&self, solution: &SolutionState) -> Result<ExecutionVerdict> {
        self.check_compilable(solution)
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        buf.truncate(DIAGNOSTIC_LIMIT);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Relative path with no root, prefix or `..` components.
pub fn is_safe_relative(path: &Path) -> bool {
    !path.as_os_str().is_empty()
        && path
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}
