//! Print the built-in office-floor scenario as an editable TOML file.
//!
//! cargo run --example desk_scale_scenario -- [seed] [mobile_fraction] > floor.toml

use dynoloc::simulator::{DeskScale, RunParams, Scenario};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mobile_fraction: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let scenario = Scenario::desk_scale(&DeskScale {
        mobile_fraction,
        run: RunParams {
            seed,
            ..Default::default()
        },
        ..Default::default()
    });
    print!("{}", scenario.to_toml_string());
}
