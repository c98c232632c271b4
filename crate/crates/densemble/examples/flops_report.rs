//! Static per-layer MAC counts: the desk-scale model, then the full-scale
//! configuration, compared against a single-network baseline (backbone +
//! global average pooling + one 1024-d embedding). The punchline is the
//! shared fraction: all heads together cost ~1% over one network.
//!
//! Run: cargo run --example flops_report

use densemble::backbone::DenseNetConfig;
use densemble::ensemble::EnsembleConfig;
use densemble::flops::{all_heads, count_baseline, count_model, giga};

fn main() -> densemble::Result<()> {
    let mini = EnsembleConfig::mini(20);
    let report = count_model(&mini, &all_heads(&mini), false)?;
    println!("mini ensemble, per-layer (input 3x64x32):\n");
    print!("{}", report.render_table());
    println!(
        "\nshared {} MACs + heads {} MACs = {} total; shared fraction {:.5}\n",
        report.shared_macs(),
        report.head_macs(),
        report.total_macs(),
        report.shared_fraction()
    );

    // Full scale at 384x128: 16 heads of 512 dims vs the plain baseline.
    let full = EnsembleConfig::paper(8, 512, 751);
    let ensemble = count_model(&full, &all_heads(&full), false)?;
    let baseline = count_baseline(&DenseNetConfig::densenet121((384, 128)), 1024)?;
    println!("full scale (384x128, 16 heads x 512):");
    println!("  baseline  {:.4} G MACs", giga(baseline.total_macs()));
    println!(
        "  ensemble  {:.4} G MACs  (+{:.2}% over baseline)",
        giga(ensemble.total_macs()),
        100.0 * (ensemble.total_macs() as f64 / baseline.total_macs() as f64 - 1.0)
    );
    println!("  shared fraction {:.5}", ensemble.shared_fraction());

    // Dropping heads at evaluation time sheds only head-side cost.
    let half = count_model(&full, &[1, 2, 3, 4, 5, 6, 7, 8], false)?;
    println!(
        "  8 of 16 heads: {:.4} G MACs (backbone unchanged, head cost halved)",
        giga(half.total_macs())
    );
    Ok(())
}
