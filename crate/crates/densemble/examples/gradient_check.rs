//! Verifies every analytic backward pass against central finite differences:
//! first each layer primitive in isolation over several random shapes, then
//! the whole mini ensemble end to end.
//!
//! Run: cargo run --example gradient_check

use densemble::gradcheck::{full_model_check, primitive_battery, MODEL_TOL, PRIMITIVE_TOL};

fn main() -> densemble::Result<()> {
    let mut worst: std::collections::BTreeMap<String, f64> = Default::default();
    for seed in 0..5 {
        for rep in primitive_battery(seed)? {
            let w = worst.entry(rep.name).or_insert(0.0);
            *w = w.max(rep.max_rel_err);
        }
    }
    println!("primitive gradients vs finite differences (worst over 5 seeds):");
    for (name, err) in &worst {
        println!(
            "  {name:<26} {err:.3e}  {}",
            if *err <= PRIMITIVE_TOL { "ok" } else { "FAIL" }
        );
        assert!(*err <= PRIMITIVE_TOL);
    }

    // The full model chains every primitive: stem, four dense blocks,
    // transitions, eight heads, softmax losses. Two coordinates per tensor
    // already touch every parameter matrix.
    let rep = full_model_check(0, 2)?;
    println!(
        "full mini ensemble ({} sampled coordinates): {:.3e}  {}",
        rep.coords,
        rep.max_rel_err,
        if rep.max_rel_err <= MODEL_TOL { "ok" } else { "FAIL" }
    );
    assert!(rep.max_rel_err <= MODEL_TOL);
    Ok(())
}
