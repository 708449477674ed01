use std::collections::BTreeMap;

use proptest::prelude::*;

use budget_mcts::harness::{
    parse_metric_line, tail_truncate, ExecRequest, Executor, ExitStatus, HarnessConfig,
    ProcessExecutor,
};
use budget_mcts::repo::SolutionRepo;
use budget_mcts::tree::NodeId;

fn repo(main: &str) -> SolutionRepo {
    SolutionRepo::new(
        "runfile.py",
        BTreeMap::from([
            ("runfile.py".to_string(), main.to_string()),
            ("helpers.py".to_string(), "VALUE = 0.5\n".to_string()),
        ]),
    )
    .unwrap()
}

fn run(
    main: &str,
    limit: f64,
    kill_after: f64,
) -> (tempfile::TempDir, budget_mcts::harness::ExecutionOutcome) {
    let dir = tempfile::tempdir().unwrap();
    let mut exec = ProcessExecutor::new(HarnessConfig::default(), dir.path());
    let r = repo(main);
    let out = exec
        .execute(ExecRequest {
            tree: 0,
            node: NodeId(3),
            repo: &r,
            limit,
            kill_after,
        })
        .unwrap();
    (dir, out)
}

#[test]
fn success_parses_the_sentinel_and_writes_artifacts() {
    let (dir, out) = run(
        "from helpers import VALUE\nprint('training')\nprint(f'Final Validation Metric: {VALUE}')\n",
        30.0,
        30.0,
    );
    assert_eq!(out.exit, ExitStatus::Success);
    assert_eq!(out.metric_line, Some(0.5));
    assert!(out.cost.t > 0.0 && out.cost.t <= 30.0);
    let node = dir.path().join("t0-n00003");
    assert!(node.join("helpers.py").is_file());
    let meta = std::fs::read_to_string(node.join("exit.meta")).unwrap();
    assert!(meta.contains("\"success\""), "{meta}");
}

#[test]
fn crash_is_reported_with_output() {
    let (_dir, out) = run("raise ValueError('bad shape')\n", 30.0, 30.0);
    assert_eq!(out.exit, ExitStatus::Failure);
    assert!(out.output.contains("bad shape"));
    assert_eq!(out.metric_line, None);
}

#[test]
fn timeout_clamps_t_to_the_limit() {
    let (_dir, out) = run("import time\ntime.sleep(30)\n", 0.5, 0.5);
    assert_eq!(out.exit, ExitStatus::Timeout);
    assert_eq!(out.cost.t, out.cost.limit);
    assert_eq!(out.cost.limit, 0.5);
}

#[test]
fn budget_kill_before_the_limit() {
    let (_dir, out) = run("import time\ntime.sleep(30)\n", 10.0, 0.5);
    assert_eq!(out.exit, ExitStatus::Killed);
    assert!(out.cost.t <= out.cost.limit);
}

proptest! {
    #[test]
    fn truncation_keeps_a_sentinel_in_the_window(
        noise in prop::collection::vec("[a-z ]{0,40}", 0..60),
        metric in -1e3f64..1e3,
        cap in 40usize..400,
    ) {
        let sentinel = format!("Final Validation Metric: {metric}");
        let output = format!("{}\n{sentinel}\n", noise.join("\n"));
        let tail = tail_truncate(&output, cap);
        prop_assert!(tail.len() <= cap);
        prop_assert!(output.ends_with(&tail));
        // whole lines only
        prop_assert!(tail.is_empty() || tail.len() == output.len() || output[..output.len() - tail.len()].ends_with('\n'));
        if sentinel.len() < cap {
            prop_assert_eq!(parse_metric_line(&tail), Some(metric));
        }
    }
}
