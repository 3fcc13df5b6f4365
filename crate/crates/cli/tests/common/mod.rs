#![allow(dead_code)]

use std::fs;
use std::path::Path;

use chainshort_cli::Config;
use chainshort_core::{CompileCheck, ExecutionVerdict, ScriptEntry, SolutionState};

/// Training tasks: one per theme.
pub const TRAIN: [(&str, &str); 10] = [
    ("defog", "Photo defogger with haze removal and contrast boost"),
    ("alarm", "Alarm clock with snooze, volume ramp and weekday schedules"),
    ("todo", "Todo list with due dates, priorities and reminders"),
    ("budget", "Household budget tracker with categories, charts and monthly limits"),
    ("quiz", "Flashcard quiz with spaced repetition, scoring and decks"),
    ("weather", "Weather dashboard with forecast, radar and severe alerts"),
    ("recipe", "Recipe manager with ingredients, servings and shopping export"),
    ("snake", "Snake game with levels, obstacles and high scores"),
    ("timer", "Pomodoro timer with breaks, statistics and sounds"),
    ("notes", "Markdown notes editor with tags, search and preview"),
];

/// Held-out tasks: two paraphrases per training theme.
pub const TEST: [(&str, &str); 20] = [
    ("haze", "Photo haze removal with contrast boost and sharpening"),
    ("defog2", "Defogger for photo scenes with haze estimation"),
    ("clock", "Alarm clock with snooze and weekday schedules"),
    ("wake", "Wake alarm with volume ramp and snooze"),
    ("tasks", "Todo list with priorities and due reminders"),
    ("chores", "Chores todo tracker with due dates and reminders"),
    ("spend", "Budget tracker with categories and monthly limits"),
    ("money", "Expense budget with charts and categories"),
    ("cards", "Flashcard quiz with decks and scoring"),
    ("learn", "Spaced repetition flashcard trainer with quiz scoring"),
    ("forecast", "Weather forecast dashboard with severe alerts"),
    ("radar", "Radar weather viewer with forecast and alerts"),
    ("cook", "Recipe manager with servings and ingredients"),
    ("meal", "Meal recipe planner with shopping export and ingredients"),
    ("serpent", "Snake game with obstacles and high scores"),
    ("arcade", "Arcade snake with levels and scores"),
    ("focus", "Pomodoro focus timer with breaks and sounds"),
    ("tomato", "Timer with pomodoro statistics and breaks"),
    ("memo", "Notes editor with markdown preview and tags"),
    ("jot", "Markdown jot notes with search and tags"),
];

pub fn write_tasks(path: &Path, tasks: &[(&str, &str)]) {
    let body: String = tasks.iter().map(|(id, t)| format!("{id}\t{t}\n")).collect();
    fs::write(path, body).unwrap();
}

pub fn offline() -> Config {
    Config {
        offline: true,
        jobs: 4,
        time_budget_seconds: 600.0,
        token_budget: 20_000,
        ..Config::default()
    }
}

pub fn entry(role: &str, text: &str, t: f64, k: u64) -> ScriptEntry {
    ScriptEntry {
        role_profile: role.into(),
        text: text.into(),
        time_seconds: t,
        tokens: k,
    }
}

/// Marks every non-empty solution compilable without running it.
pub struct AssumeCompiles;

impl CompileCheck for AssumeCompiles {
    fn check(&self, s: &SolutionState) -> chainshort_core::Result<ExecutionVerdict> {
        Ok(ExecutionVerdict {
            compilable: !s.is_empty(),
            exit_code: Some(0),
            timed_out: false,
            diagnostics: String::new(),
            wall_time_seconds: 0.0,
        })
    }
}

/// Every file under `dir`, relative path and bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
