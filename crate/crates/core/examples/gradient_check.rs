//! Finite-difference check of every differentiable op, plus a hand-rolled
//! check of a small custom expression.
//!
//! cargo run --release --example gradient_check -- [instances]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spleenlen::tensor::{grad_check, gradient_suite, Graph, Tensor, Var, FD_STEP};

fn main() -> spleenlen::Result<()> {
    let instances: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let rows = gradient_suite(instances, 2024)?;
    for r in &rows {
        println!(
            "{:<20} max rel err {:.2e} (tol {:.0e})  {}",
            r.op,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }

    // sum(sigmoid(x · wᵀ))
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = vec![("x", Tensor::uniform(&[3, 4], 1.0, &mut rng)), ("w", Tensor::uniform(&[2, 4], 1.0, &mut rng))];
    let loss = |g: &mut Graph, v: &[Var]| {
        let y = g.linear(v[0], v[1], None)?;
        let s = g.sigmoid(y)?;
        g.sum(s)
    };
    let report = grad_check(&inputs, loss, FD_STEP, 1e-6)?;
    println!("custom expression: max rel err {:.2e}, passed {}", report.max_rel_err(), report.passed());
    Ok(())
}
