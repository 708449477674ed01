//! Prints paired ablation statistics over a seed range.
//!
//! Usage: `cargo run --release --example ablation -- [n] [config.toml] [first_seed]`
use budget_mcts::config::RunConfig;
use budget_mcts::sweep::{paired, sweep, SeedOutcome};
use budget_mcts::tree::SelectionPolicy;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let offset: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let seeds: Vec<u64> = (offset..offset + n).collect();
    let base = match args.get(2) {
        Some(path) => RunConfig::read(std::path::Path::new(path)).unwrap(),
        None => RunConfig::default(),
    };
    let mut vanilla = base.clone();
    vanilla.reward.w = 0.0;
    let mut greedy = base.clone();
    greedy.search.policy = SelectionPolicy::Greedy;
    let a = sweep(&base, &seeds).unwrap();
    let b = sweep(&vanilla, &seeds).unwrap();
    let g = sweep(&greedy, &seeds).unwrap();
    let col = |v: &[SeedOutcome], f: fn(&SeedOutcome) -> f64| v.iter().map(f).collect::<Vec<_>>();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let nodes = |o: &SeedOutcome| o.nodes as f64;
    let esr = |o: &SeedOutcome| o.effective_solution_rate;
    let best = |o: &SeedOutcome| o.best.unwrap_or(f64::NEG_INFINITY);
    println!(
        "nodes  aware {:.2} vanilla {:.2} greedy {:.2}",
        mean(&col(&a, nodes)),
        mean(&col(&b, nodes)),
        mean(&col(&g, nodes))
    );
    println!(
        "esr    aware {:.4} vanilla {:.4} greedy {:.4}",
        mean(&col(&a, esr)),
        mean(&col(&b, esr)),
        mean(&col(&g, esr))
    );
    println!(
        "best   aware {:.4} vanilla {:.4} greedy {:.4}",
        mean(&col(&a, best)),
        mean(&col(&b, best)),
        mean(&col(&g, best))
    );
    println!(
        "nodes paired {:?}",
        paired(&col(&a, nodes), &col(&b, nodes))
    );
    println!("esr paired {:?}", paired(&col(&a, esr), &col(&b, esr)));
    println!(
        "best aware-greedy {:?}",
        paired(&col(&a, best), &col(&g, best))
    );
    println!(
        "best vanilla-greedy {:?}",
        paired(&col(&b, best), &col(&g, best))
    );
}
