//! Per-epoch trace of one office-floor run.
//!
//! cargo run --release --example trace_run -- [strategy] [mobile_fraction] [rate_hz] [seed]

use dynoloc::scheduler::Strategy;
use dynoloc::simulator::{run_scenario, DeskScale, RunParams, Scenario};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let strategy: Strategy = args.first().map_or(Ok(Strategy::Dynoloc), |s| s.parse()).expect("strategy");
    let mobile: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let rate: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let s = Scenario::desk_scale(&DeskScale {
        mobile_fraction: mobile,
        run: RunParams { seed, strategy, refresh_rate: rate, ..Default::default() },
        ..Default::default()
    });
    for r in run_scenario(&s).expect("valid scenario") {
        let errs: Vec<String> = r
            .nodes
            .iter()
            .map(|n| match (n.localized, n.error_m) {
                (true, Some(e)) => format!("{e:5.1}"),
                (false, Some(e)) => format!("({e:3.0})"),
                _ => "  -  ".into(),
            })
            .collect();
        println!(
            "{:3} slots {:3}/{:3} ses {:2} rng {:2} fail {} comps {:?} abs {:6.2} rel {:6.2} | {}",
            r.epoch,
            r.slots_used,
            r.total_slots,
            r.schedule.sessions,
            r.schedule.ranges_measured,
            r.schedule.failed_sessions,
            r.rigid_component_sizes,
            r.absolute_rmse.unwrap_or(f64::NAN),
            r.relative_rmse.unwrap_or(f64::NAN),
            errs.join(" ")
        );
    }
}
