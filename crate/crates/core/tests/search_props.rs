mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use budget_mcts::config::RunConfig;
use budget_mcts::reward::oriented_metric;
use budget_mcts::run::run_sim;
use budget_mcts::search::select_candidate;
use budget_mcts::trajectory::EventKind;
use budget_mcts::tree::{Action, NodeId, NodeStatus, SearchConfig};

proptest! {
    #[test]
    fn selection_matches_oracle(seed in any::<u64>(), n_i in 1u32..5, n_s in 1u32..8, c in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (tree, _) = common::random_tree(&mut rng, 100);
        let cfg = SearchConfig {
            c_uct: c,
            max_improve_children: n_i,
            stagnation_window: n_s,
            ..SearchConfig::default()
        };
        prop_assert_eq!(select_candidate(&tree, &cfg), common::select_oracle(&tree, &cfg));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn run_invariants(
        seed in 0u64..10_000,
        w in prop::sample::select(vec![0.0, -0.07, -0.3]),
        n_i in 1u32..4,
        n_d in 1u32..6,
        budget in 40.0f64..200.0,
    ) {
        let mut cfg = RunConfig::default();
        cfg.search.seed = seed;
        cfg.reward.w = w;
        cfg.search.max_improve_children = n_i;
        cfg.search.max_debug_depth = n_d;
        cfg.search.time_budget = budget;
        let r = run_sim(&cfg).unwrap();
        let tree = &r.trees[0];
        let limit = cfg.search.limit();

        prop_assert!(tree.elapsed <= budget + limit + 1e-9, "elapsed {}", tree.elapsed);

        // connected and acyclic: parents precede children, child lists agree
        for node in &tree.nodes {
            match node.parent {
                None => prop_assert_eq!(node.id, NodeId::ROOT),
                Some(p) => {
                    prop_assert!(p < node.id);
                    prop_assert!(tree.node(p).children.contains(&node.id));
                }
            }
            for &c in &node.children {
                prop_assert_eq!(tree.node(c).parent, Some(node.id));
            }
            prop_assert!(node.debug_depth <= n_d);
            if node.status == NodeStatus::Valid {
                let improves = node
                    .children
                    .iter()
                    .filter(|&&c| tree.node(c).action == Some(Action::Improve))
                    .count();
                prop_assert!(improves <= n_i as usize, "{} has {improves} improve children", node.id);
            }
        }

        // Q is the mean of every reward propagated through the node
        let mut seen: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        for e in &r.events {
            if let EventKind::Backprop { reward, path } = &e.kind {
                for id in path {
                    seen.entry(*id).or_default().push(*reward);
                }
            }
        }
        for node in &tree.nodes {
            let rewards = seen.get(&node.id).cloned().unwrap_or_default();
            prop_assert_eq!(node.visits as usize, rewards.len());
            if !rewards.is_empty() {
                let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
                prop_assert!((node.value - mean).abs() <= 1e-12);
            }
        }

        // the incumbent is the maximum over valid nodes at every step
        let mut max_valid: Option<f64> = None;
        let mut incumbent: Option<f64> = None;
        for e in &r.events {
            match &e.kind {
                EventKind::Reviewed { status: NodeStatus::Valid, metric: Some(m), .. } => {
                    let o = oriented_metric(*m, &r.metric).unwrap();
                    max_valid = Some(max_valid.map_or(o, |b| b.max(o)));
                }
                EventKind::BestUpdated { oriented, .. } => incumbent = Some(*oriented),
                // between iterations the register has caught up with every review
                EventKind::NodeCreated { .. } => prop_assert_eq!(incumbent, max_valid),
                _ => {}
            }
        }
        prop_assert_eq!(incumbent, max_valid);
        prop_assert_eq!(r.best.map(|b| b.oriented), max_valid);
    }
}

#[test]
fn same_config_same_tree() {
    let cfg = RunConfig::default();
    let a = run_sim(&cfg).unwrap();
    let b = run_sim(&cfg).unwrap();
    assert_eq!(a.events, b.events);
}

#[test]
fn greedy_never_redrafts_after_a_valid_node() {
    let mut cfg = RunConfig::default();
    cfg.search.policy = budget_mcts::tree::SelectionPolicy::Greedy;
    let r = run_sim(&cfg).unwrap();
    let tree = &r.trees[0];
    let first_valid = tree
        .nodes
        .iter()
        .find(|n| n.status == NodeStatus::Valid)
        .map(|n| n.id)
        .expect("a valid node");
    for &d in &tree.node(NodeId::ROOT).children {
        // a later draft would mean the root was re-selected
        assert!(
            d <= first_valid,
            "draft {d} after first valid {first_valid}"
        );
    }
}
