use std::fs;

use chainshort_core::graph::{Solution, SourceFile, TaskGraph};
use chainshort_core::{LanguageProfile, ResourceDelta, Sandbox};

fn state(files: Vec<SourceFile>) -> chainshort_core::SolutionState {
    let mut g = TaskGraph::new("t", "task").unwrap();
    g.append_step("go", Solution::from_files(files), ResourceDelta::ZERO);
    g.final_node().clone()
}

fn py(body: &str) -> chainshort_core::SolutionState {
    state(vec![SourceFile::new("main.py", body)])
}

#[test]
fn verdicts_for_good_bad_and_hanging_programs() {
    let root = tempfile::tempdir().unwrap();
    let sb = Sandbox::new(LanguageProfile::python().with_timeout(1.0))
        .unwrap()
        .with_work_root(root.path());

    let ok = sb.check_compilable(&py("print('hi')\n")).unwrap();
    assert!(ok.compilable);
    assert_eq!(ok.exit_code, Some(0));

    let bad = sb.check_compilable(&py("def broken(:\n")).unwrap();
    assert!(!bad.compilable);
    assert!(!bad.timed_out);
    assert!(bad.diagnostics.contains("SyntaxError"));

    let hang = sb.check_compilable(&py("while True:\n    pass\n")).unwrap();
    assert!(!hang.compilable);
    assert!(hang.timed_out);
    assert!(hang.wall_time_seconds < 5.0);

    assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
}

#[test]
fn multi_file_solutions_import_each_other() {
    let sb = Sandbox::new(LanguageProfile::python()).unwrap();
    let s = state(vec![
        SourceFile::new("main.py", "from util import f\nassert f() == 2\n"),
        SourceFile::new("util.py", "def f():\n    return 2\n"),
    ]);
    assert!(sb.check_compilable(&s).unwrap().compilable);
}

#[test]
fn environment_is_scrubbed() {
    std::env::set_var("CHAINSHORT_SANDBOX_PROBE", "leak");
    let sb = Sandbox::new(LanguageProfile::python()).unwrap();
    let v = sb
        .check_compilable(&py("import os, sys\nsys.exit(1 if 'CHAINSHORT_SANDBOX_PROBE' in os.environ else 0)\n"))
        .unwrap();
    assert!(v.compilable);
}
