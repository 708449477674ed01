//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use rand::Rng;

use budget_mcts::config::{Mode, RunConfig};
use budget_mcts::drivers::client::Exchange;
use budget_mcts::drivers::fixture::reply;
use budget_mcts::drivers::EndpointConfig;
use budget_mcts::search::backpropagate;
use budget_mcts::tree::{Action, NodeId, NodeStatus, SearchConfig, TreeState};

// ---------------------------------------------------------------------------
// fixed-point arithmetic with 192 fractional bits

const BITS: u32 = 192;

fn one() -> BigInt {
    BigInt::from(1) << BITS
}

/// Exact conversion of a finite double.
pub fn fixed(x: f64) -> BigInt {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (m, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    };
    let shift = e + i64::from(BITS);
    let mag = if shift >= 0 {
        BigInt::from(m) << shift as usize
    } else {
        BigInt::from(m) >> (-shift) as usize
    };
    if x.is_sign_negative() {
        -mag
    } else {
        mag
    }
}

fn to_f64(x: &BigInt) -> f64 {
    // keep 100 significant fractional bits, then scale
    let top: BigInt = x >> (BITS - 100);
    let (sign, digits) = top.to_u64_digits();
    let mut v = 0f64;
    for d in digits.iter().rev() {
        v = v * 18446744073709551616.0 + *d as f64;
    }
    let v = v / 2f64.powi(100);
    if sign == num_bigint::Sign::Minus {
        -v
    } else {
        v
    }
}

fn mul(a: &BigInt, b: &BigInt) -> BigInt {
    (a * b) >> BITS
}

fn div(a: &BigInt, b: &BigInt) -> BigInt {
    (a << BITS) / b
}

fn atanh_series(z: &BigInt) -> BigInt {
    let z2 = mul(z, z);
    let mut term = z.clone();
    let mut sum = BigInt::from(0);
    let mut n = 1u32;
    while term != BigInt::from(0) {
        sum += &term / n;
        term = mul(&term, &z2);
        n += 2;
    }
    sum
}

fn ln2() -> BigInt {
    atanh_series(&(one() / 3)) * 2
}

fn ln(x: &BigInt) -> BigInt {
    assert!(*x > BigInt::from(0));
    let (mut x, mut k) = (x.clone(), 0i64);
    let two = one() * 2;
    while x >= two {
        x >>= 1;
        k += 1;
    }
    while x < one() {
        x <<= 1;
        k -= 1;
    }
    let z = div(&(&x - one()), &(&x + one()));
    atanh_series(&z) * 2 + ln2() * k
}

fn exp(y: &BigInt) -> BigInt {
    let l2 = ln2();
    // floor division
    let mut n = y / &l2;
    if y < &BigInt::from(0) && &n * &l2 != *y {
        n -= 1;
    }
    let f = y - &n * &l2;
    let mut term = one();
    let mut sum = one();
    let mut i = 1u32;
    while term != BigInt::from(0) {
        term = mul(&term, &f) / i;
        sum += &term;
        i += 1;
    }
    let n: i64 = n.try_into().expect("exponent fits");
    if n >= 0 {
        sum << n as usize
    } else {
        sum >> (-n) as usize
    }
}

/// `g * (t / limit)^w` evaluated with ~190 bits of precision.
pub fn reward_oracle(g: f64, t: f64, limit: f64, w: f64) -> f64 {
    let r = div(&fixed(t), &fixed(limit));
    let y = mul(&fixed(w), &ln(&r));
    to_f64(&mul(&fixed(g), &exp(&y)))
}

// ---------------------------------------------------------------------------
// selection

fn oracle_fully_expanded(tree: &TreeState, id: NodeId, cfg: &SearchConfig) -> bool {
    let n = &tree.nodes[id.0 as usize];
    match n.status {
        NodeStatus::Buggy => true,
        NodeStatus::Valid => n.children.len() >= cfg.max_improve_children as usize,
        NodeStatus::Root => {
            !(n.children.is_empty() || tree.valid_since_best >= cfg.stagnation_window)
        }
        // never selected as a parent in practice; treat like a leaf in flight
        NodeStatus::DraftPending => true,
    }
}

fn oracle_score(tree: &TreeState, child: NodeId, parent_visits: u64, c: f64) -> f64 {
    let n = &tree.nodes[child.0 as usize];
    if n.visits == 0 {
        return f64::INFINITY;
    }
    n.value + c * ((parent_visits as f64).ln() / n.visits as f64).sqrt()
}

/// Recursive argmax descent: returns the first node that is not fully
/// expanded, or the root when the descent dead-ends in a fully expanded leaf.
pub fn select_oracle(tree: &TreeState, cfg: &SearchConfig) -> NodeId {
    fn descend(tree: &TreeState, id: NodeId, cfg: &SearchConfig) -> Option<NodeId> {
        if !oracle_fully_expanded(tree, id, cfg) {
            return Some(id);
        }
        let n = &tree.nodes[id.0 as usize];
        if n.children.is_empty() {
            return None;
        }
        let scores: Vec<f64> = n
            .children
            .iter()
            .map(|&c| oracle_score(tree, c, n.visits, cfg.c_uct))
            .collect();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pick = n.children[scores.iter().position(|&s| s == best).unwrap()];
        descend(tree, pick, cfg)
    }
    descend(tree, NodeId::ROOT, cfg).unwrap_or(NodeId::ROOT)
}

fn oracle_path(tree: &TreeState, leaf: NodeId) -> Vec<NodeId> {
    let mut path = vec![leaf];
    let mut cur = leaf;
    while let Some(p) = tree.nodes[cur.0 as usize].parent {
        path.push(p);
        cur = p;
    }
    path
}

/// A random tree of up to `max_nodes` nodes with random statuses and random
/// backpropagated rewards. Returns every reward each node has seen.
pub fn random_tree<R: Rng>(
    rng: &mut R,
    max_nodes: usize,
) -> (TreeState, HashMap<NodeId, Vec<f64>>) {
    let mut tree = TreeState::new(0);
    let n = rng.random_range(1..=max_nodes);
    for _ in 1..n {
        let parent = NodeId(rng.random_range(0..tree.nodes.len() as u32));
        let action = if parent == NodeId::ROOT {
            Action::Draft
        } else {
            Action::Improve
        };
        let id = tree.add_child(parent, action, 0.0);
        tree.node_mut(id).status = if rng.random_bool(0.6) {
            NodeStatus::Valid
        } else {
            NodeStatus::Buggy
        };
    }
    let mut seen: HashMap<NodeId, Vec<f64>> = HashMap::new();
    let rounds = rng.random_range(0..3 * n);
    for _ in 0..rounds {
        let leaf = NodeId(rng.random_range(0..tree.nodes.len() as u32));
        let reward = if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random_range(0.0..1.3)
        };
        for id in oracle_path(&tree, leaf) {
            seen.entry(id).or_default().push(reward);
        }
        backpropagate(&mut tree, leaf, reward);
    }
    tree.valid_since_best = rng.random_range(0..8);
    (tree, seen)
}

// ---------------------------------------------------------------------------
// diffs

/// Straight-line reference application of (file, search, replace) hunks.
pub fn naive_apply(
    files: &BTreeMap<String, String>,
    hunks: &[(String, String, String)],
    main: &str,
) -> Option<BTreeMap<String, String>> {
    let mut files = files.clone();
    for (file, search, replace) in hunks {
        let bad_path = file.is_empty()
            || file.starts_with('/')
            || file.contains('\\')
            || file
                .split('/')
                .any(|p| p.is_empty() || p == "." || p == "..");
        if bad_path {
            return None;
        }
        if search.is_empty() {
            if files.contains_key(file) {
                return None;
            }
            if !replace.is_empty() {
                files.insert(file.clone(), replace.clone());
            }
            continue;
        }
        let content = files.get(file)?;
        let positions: Vec<usize> = (0..=content.len().saturating_sub(search.len()))
            .filter(|&i| content.is_char_boundary(i) && content[i..].starts_with(search.as_str()))
            .collect();
        if positions.len() != 1 {
            return None;
        }
        let at = positions[0];
        let updated = format!(
            "{}{}{}",
            &content[..at],
            replace,
            &content[at + search.len()..]
        );
        if updated.is_empty() {
            files.remove(file);
        } else {
            files.insert(file.clone(), updated);
        }
    }
    files.contains_key(main).then_some(files)
}

// ---------------------------------------------------------------------------
// model fixtures

pub const IMPROVE: &str = "Raising the constant should help, following Cite 00001.\n\
<<<FILE: helpers.py>>>\n<<<SEARCH>>>\n    return 0.70\n<<<REPLACE>>>\n    return 0.75\n<<<END>>>\n";

/// Model replies for one metric → draft → review → lesson → improve → review → lesson cycle.
pub fn scripted_cycle() -> Vec<Exchange> {
    [
        "```json\n{\"metric_name\": \"accuracy\", \"lower_is_better\": false,}\n```",
        "- Model: a constant scorer.\n- Data: none.\n- Training: none.\n- Evaluation: print the score.",
        "```json\n{\"helpers\": \"Returns the validation score.\", \"main\": \"Prints the score.\"}\n```",
        "```python\ndef score():\n    return 0.70\n```",
        "```python\nimport helpers\nassert helpers.score() > 0\nprint('ok')\n```",
        "```python\nimport helpers\nprint(f\"Final Validation Metric: {helpers.score()}\")\n```",
        "```json\n{\"summary\": \"Prints a constant score.\", \"metric\": 0.70, \"valid_metric\": true}\n```",
        "Title: Start from a constant baseline\nSummary: A constant scorer.\n\
         Empirical Findings: Score 0.70 in well under a second.\n\
         Key Lesson: Establish a fast baseline before tuning.",
        IMPROVE,
        "```json\n{\"summary\": \"Prints a higher constant.\", \"metric\": 0.75, \"valid_metric\": true}\n```",
        "Title: Raise the returned constant\nSummary: The helper returns 0.75.\n\
         Empirical Findings: Up 0.05 over the best, same runtime.\n\
         Key Lesson: Small targeted edits to a working helper are cheap wins.",
    ]
    .iter()
    .map(|c| reply(c))
    .collect()
}

/// Two iterations against `base_url`, metric left to the model, module tests on.
pub fn llm_cycle_config(base_url: String) -> RunConfig {
    let mut cfg = RunConfig {
        mode: Mode::Llm,
        endpoint: Some(EndpointConfig {
            base_url,
            retry_cap: 1,
            timeout_secs: 10.0,
            ..EndpointConfig::default()
        }),
        ..RunConfig::default()
    };
    cfg.search.max_iterations = Some(2);
    cfg.llm.model_dedup = false;
    cfg.llm.module_tests = true;
    cfg.llm.module_test_limit = Some(20.0);
    cfg
}
