//! One epoch of edge selection: the most mobile nodes range first, each
//! with its three best links into the rigid graph, inside a 1 Hz budget.
//!
//! cargo run --example schedule_epoch

use std::collections::{BTreeMap, BTreeSet};

use dynoloc::metrics::{LinkQuality, NodeTelemetry};
use dynoloc::scheduler::{
    baseline_h_agnos, form_concurrency_rounds, select_edges_epoch, RangingBudget, RoundRobinCursor, SelectionHints,
};
use dynoloc::topology::{k_core_decompose, ConnectivityGraph};
use dynoloc::Point2;

fn main() -> dynoloc::Result<()> {
    let pos: BTreeMap<u32, Point2> = (0..10u32)
        .map(|i| {
            let a = i as f64 * 0.63;
            (i, Point2::new(12.0 * a.cos() + i as f64, 9.0 * a.sin()))
        })
        .collect();
    let mut g = ConnectivityGraph::with_nodes(pos.keys().copied());
    for (&a, pa) in &pos {
        for (&b, pb) in pos.range(a + 1..) {
            let d = pa.distance(*pb);
            if d < 18.0 {
                // Longer links read as worse channels here.
                g.set_link(a, b, LinkQuality::new(200.0 / (1.0 + d), 0.0))?;
            }
        }
    }
    let mut telemetry: BTreeMap<u32, NodeTelemetry> = pos.keys().map(|&n| (n, NodeTelemetry::default())).collect();
    for (n, m) in [(3, 4.0), (7, 2.5), (1, 1.0)] {
        telemetry.get_mut(&n).expect("known node").mobility = m;
    }

    let budget = RangingBudget::new(1.0, 8.0)?.with_overhead_ms(8.0);
    let decomp = k_core_decompose(&g);
    let rigid: BTreeSet<u32> = decomp.three_core();
    let hints = SelectionHints {
        positions: Some(&pos),
        anchor: Some(0),
        ..Default::default()
    };
    let sched = select_edges_epoch(&g, &decomp, &rigid, &telemetry, &budget, hints);
    println!("budget {} slots", budget.total_slots);
    for s in &sched.sessions {
        println!("  {:?} {} -> {:?}", s.purpose, s.initiator, s.responders);
    }
    let rounds = form_concurrency_rounds(&sched, 15.0, &pos);
    println!(
        "{} sessions, {} slots back to back, {} rounds with 15 m interference range",
        sched.sessions.len(),
        sched.budget.slots_used,
        rounds.concurrency_rounds.len()
    );

    let mut cursor = RoundRobinCursor::default();
    let agnostic = baseline_h_agnos(&g, &budget, &mut cursor);
    println!("round-robin baseline fits {} pairs in the same budget", agnostic.sessions.len());
    Ok(())
}
