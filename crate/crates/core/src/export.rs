//! Tree exports: the full node dump as JSON and a Graphviz DOT rendering.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::tree::{NodeStatus, TreeState};

pub fn tree_file(run_dir: &Path, tree: u32) -> PathBuf {
    run_dir.join(format!("tree-{tree}.json"))
}

pub fn write_tree(run_dir: &Path, tree: &TreeState) -> io::Result<()> {
    let json = serde_json::to_string_pretty(tree).map_err(io::Error::other)?;
    fs::write(tree_file(run_dir, tree.tree), json + "\n")
}

/// All `tree-<k>.json` files of a run, ordered by tree index.
pub fn load_trees(run_dir: &Path) -> io::Result<Vec<TreeState>> {
    let mut trees = Vec::new();
    for k in 0.. {
        let path = tree_file(run_dir, k);
        if !path.exists() {
            break;
        }
        let text = fs::read_to_string(&path)?;
        let tree = serde_json::from_str(&text).map_err(|e| {
            io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{}: {e}", path.display()),
            )
        })?;
        trees.push(tree);
    }
    Ok(trees)
}

fn status_color(s: NodeStatus) -> &'static str {
    match s {
        NodeStatus::Root => "gray",
        NodeStatus::DraftPending => "lightyellow",
        NodeStatus::Valid => "palegreen",
        NodeStatus::Buggy => "lightcoral",
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// DOT graph: one cluster per tree, edges labelled by action, nodes filled by status.
pub fn to_dot(trees: &[TreeState]) -> String {
    let mut out = String::from("digraph search {\n  node [shape=box, style=filled];\n");
    for t in trees {
        let _ = writeln!(
            out,
            "  subgraph cluster_t{} {{\n    label=\"tree {}\";",
            t.tree, t.tree
        );
        for n in &t.nodes {
            let mut label = n.id.to_string();
            if let Some(m) = n.metric {
                let _ = write!(label, "\\nmetric {m:.6}");
            }
            if let Some(c) = n.cost {
                let _ = write!(label, "\\nt {:.2}", c.t);
            }
            let _ = write!(label, "\\nN={} Q={:.4}", n.visits, n.value);
            let pen = if t.best == Some(n.id) {
                ", penwidth=3"
            } else {
                ""
            };
            let _ = writeln!(
                out,
                "    t{}_{} [label=\"{}\", fillcolor={}{}];",
                t.tree,
                n.id,
                escape(&label),
                status_color(n.status),
                pen
            );
        }
        for n in &t.nodes {
            if let (Some(p), Some(a)) = (n.parent, n.action) {
                let _ = writeln!(
                    out,
                    "    t{}_{} -> t{}_{} [label=\"{}\"];",
                    t.tree,
                    p,
                    t.tree,
                    n.id,
                    a.as_str()
                );
            }
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}
