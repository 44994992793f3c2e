//! Load a scenario file, simulate it and print per-epoch accuracy.
//!
//! cargo run --release --example simulate_scenario -- scenarios/small_room.toml

use std::path::PathBuf;

use dynoloc::simulator::{evaluate_run, Scenario, World};

fn main() -> dynoloc::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/small_room.toml")));
    let scenario = Scenario::load(&path)?;
    if let Some(v) = scenario.validate().first() {
        return Err(dynoloc::Error::InvalidArgument(v.to_string()));
    }
    let mut world = World::new(&scenario)?;
    println!("{} slots per epoch", world.budget().total_slots);
    let mut records = Vec::new();
    for _ in 0..scenario.run.epochs {
        let r = world.run_epoch();
        let localized = r.nodes.iter().filter(|n| n.localized).count();
        println!(
            "t={:5.1}s  slots {:>3}/{}  localized {localized}/{}  rmse {}",
            r.time,
            r.slots_used,
            r.total_slots,
            r.nodes.len(),
            r.absolute_rmse.map_or("-".into(), |e| format!("{e:.3} m")),
        );
        records.push(r);
    }
    let s = evaluate_run(&records);
    println!("median {:.3} m, p90 {:.3} m, {:.0}% localized", s.median_error, s.p90_error, 100.0 * s.pct_localized);
    Ok(())
}
