//! Aggregated double-sided two-way ranging: one initiator, five responders
//! with drifting clocks, replayed frame by frame.
//!
//! cargo run --example twr_ranging

use dynoloc::ranging::{
    replay_aggregated_session, sequential_slots, slots_for_aggregated_session, tof_from_timestamps,
    SPEED_OF_LIGHT_M_PER_US,
};

fn main() -> dynoloc::Result<()> {
    let distances = [3.2, 7.5, 12.0, 18.4, 25.1];
    let drift_ppm = [12.0, -8.0, 20.0, 0.0, -15.0];
    let tofs: Vec<f64> = distances.iter().map(|d| d / SPEED_OF_LIGHT_M_PER_US).collect();

    let replay = replay_aggregated_session(1000.0, &tofs, &drift_ppm)?;
    for (slot, frame) in &replay.frames {
        println!("slot {slot:>2}  {frame:?}");
    }
    println!();
    for ((x, d), ppm) in replay.exchanges.iter().zip(distances).zip(drift_ppm) {
        let est = tof_from_timestamps(x)? * SPEED_OF_LIGHT_M_PER_US;
        println!("true {d:>5.2} m  drift {ppm:>+5.1} ppm  ranged {est:.6} m  error {:+.2e} m", est - d);
    }
    let n = distances.len();
    println!(
        "\n{n} responders: {} slots aggregated, {} pairwise",
        slots_for_aggregated_session(n)?,
        sequential_slots(n)
    );
    Ok(())
}
