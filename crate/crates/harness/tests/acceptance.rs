//! Runs every acceptance criterion and prints one line per criterion.
//!
//! Criteria can be selected by id: `cargo test --test acceptance -- c3 c9`.

use std::process::ExitCode;

use leopard_core::simnet::RunOptions;
use leopard_harness::acceptance::*;

fn main() -> ExitCode {
    let picked: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.to_lowercase())
        .collect();
    let mutation = RunOptions {
        skip_vote_once: true,
        ..RunOptions::default()
    };
    type Check<'a> = Box<dyn Fn() -> CriterionResult + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("c1", Box::new(|| c1_safety_campaign(&RunOptions::default()))),
        ("c2", Box::new(c2_liveness)),
        ("c3", Box::new(c3_cost_model)),
        ("c4", Box::new(c4_sf_constancy)),
        ("c5", Box::new(c5_scale_up)),
        ("c6", Box::new(c6_retrieval_cost)),
        ("c7", Box::new(c7_breakdown)),
        ("c8", Box::new(c8_view_change)),
        ("c9", Box::new(c9_crypto)),
        ("c10", Box::new(|| c10_determinism(&mutation))),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, check) in &criteria {
        if !picked.is_empty() && !picked.iter().any(|p| p == id) {
            continue;
        }
        let result = check();
        println!("{result}");
        ran += 1;
        failed += usize::from(!result.passed);
    }
    if picked.is_empty() || picked.iter().any(|p| p == "mutation") {
        // With the vote-once guard disabled the safety campaign must fail.
        let mutated = c1_safety_campaign(&mutation);
        println!("mutation: vote-once guard off -> {mutated}");
        ran += 1;
        failed += usize::from(mutated.passed);
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
