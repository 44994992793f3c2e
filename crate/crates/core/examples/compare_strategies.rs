//! Median error of every scheduling strategy on the office floor, averaged
//! over a handful of seeds.
//!
//! cargo run --release --example compare_strategies -- [seeds] [mobile_fraction] [rate_hz]

use dynoloc::scheduler::Strategy;
use dynoloc::simulator::{evaluate_run, median, run_scenario, DeskScale, RunParams, Scenario};
use rayon::prelude::*;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(8);
    let mobile: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let rate: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    println!("{:<8} {:>8} {:>8} {:>8} {:>8}", "strategy", "median", "p90", "fresh", "loc%");
    for strategy in Strategy::ALL {
        let runs: Vec<_> = (0..seeds)
            .into_par_iter()
            .map(|seed| {
                let s = Scenario::desk_scale(&DeskScale {
                    mobile_fraction: mobile,
                    run: RunParams {
                        seed,
                        strategy,
                        refresh_rate: rate,
                        ..Default::default()
                    },
                    ..Default::default()
                });
                evaluate_run(&run_scenario(&s).expect("valid scenario"))
            })
            .collect();
        let pick = |f: fn(&dynoloc::simulator::RunSummary) -> f64| {
            median(&runs.iter().map(f).filter(|v| v.is_finite()).collect::<Vec<_>>()).unwrap_or(f64::NAN)
        };
        println!(
            "{:<8} {:>8.3} {:>8.3} {:>8.3} {:>7.1}%",
            strategy.name(),
            pick(|r| r.median_error),
            pick(|r| r.p90_error),
            pick(|r| r.median_error_localized),
            100.0 * pick(|r| r.pct_localized)
        );
    }
}
