//! Generates an instance, solves it on two consensus blocks and compares the
//! result with the reference simplex.
//!
//! ```text
//! cargo run --release -p consensus-lp --example solve -- [seed] [ascent-iters]
//! ```

use consensus_lp::{generate_instance, partition, run, solve_reference, GeneratorOptions, SolverConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let ascent_phase_iters = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let inst = generate_instance(seed, 6, 4, 2, &GeneratorOptions::default())?;
    let plan = partition(&inst.spec, 2, 3)?;
    let cfg = SolverConfig {
        ascent_phase_iters,
        ..SolverConfig::default()
    };
    let report = run(&inst.spec, &plan, &cfg)?;
    let reference = solve_reference(&inst.spec)?;

    println!("status      {:?} after {} iterations", report.status, report.iterations);
    println!("f(Z)        {:.9}", report.f_z);
    println!("f*          {:.9}", reference.f_star);
    println!("residual    {:.3e}", report.residuals.max());
    Ok(())
}
