//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-7 are exact contracts and fail the process when violated.
//! Criteria 8-13 are statistical trend checks over seeded runs of the
//! office-floor scenario; they always print their measured values, and
//! fail the process only when `ACCEPTANCE_STRICT=1` is set.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dynoloc::geometry::procrustes_align;
use dynoloc::metrics::link_quality_from_cir;
use dynoloc::ranging::{
    measure_range, replay_aggregated_session, simulate_link, slots_for_aggregated_session,
    synthesize_cir_features, tof_from_timestamps, ChannelParams, Frame, TwrTimestamps,
};
use dynoloc::relloc::{cmds_embed, complete_edm, CompletionParams, PartialEdm};
use dynoloc::scheduler::Strategy;
use dynoloc::simulator::{
    desk_walls, evaluate_run, median, run_scenario, Arena, DeskScale, NodeSpec, RunParams, RunSummary, Scenario,
    WallSpec,
};
use dynoloc::topology::{k_core_decompose, ConnectivityGraph};
use dynoloc::{NodeId, Point2, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

// Pinned tolerances and thresholds.
const TWR_IDEAL_TOL_US: f64 = 1e-6; // 1 ps
const TWR_DRIFT_PPM: f64 = 20.0;
const TWR_DRIFT_REL_TOL: f64 = 1e-3;
const CMDS_RMSE_TOL: f64 = 1e-9;
const CMDS_STRAIN_TOL: f64 = 1e-12;
const COMPLETION_TOL: f64 = 0.01;
const NOISELESS_TOL: f64 = 1e-6;
const SEEDS: u64 = 20;
const HEADLINE_BOUND_M: f64 = 2.0;
const HEADLINE_RATIO: f64 = 2.0;
const SWEEP_RATIO: f64 = 2.0;
const ABLATION_MIN_GAIN: f64 = 0.20;
const LQ_LINKS: usize = 2000;
const LQ_MAX_SPEARMAN: f64 = -0.5;
const HEADING_SIGMA_DEG: f64 = 5.0;
const HEADING_MAX_ADDED_M: f64 = 1.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    // libtest flags (e.g. --nocapture, filters) are accepted and ignored.
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let exact: [(&str, fn() -> Outcome); 7] = [
        ("1 ds-twr algebra", twr_algebra),
        ("2 slot accounting", slot_accounting),
        ("3 k-core brute force", k_core_brute_force),
        ("4 cmds recovery", cmds_recovery),
        ("5 edm completion", edm_completion),
        ("6 noiseless identity", noiseless_identity),
        ("7 determinism", determinism),
    ];
    let trends: [(&str, fn() -> Outcome); 6] = [
        ("8 headline accuracy", headline_accuracy),
        ("9 refresh-rate sweep", refresh_sweep),
        ("10 mobility sweep", mobility_sweep),
        ("11 link-quality ablation", link_quality_ablation),
        ("12 link-quality discrimination", link_quality_discrimination),
        ("13 heading-noise sensitivity", heading_sensitivity),
    ];

    let mut hard_failures = 0;
    let mut trend_failures = 0;
    let started = Instant::now();
    for (name, f) in exact {
        let t = Instant::now();
        let o = f();
        report(name, &o, t);
        hard_failures += usize::from(!o.pass);
    }
    for (name, f) in trends {
        let t = Instant::now();
        let o = f();
        report(name, &o, t);
        trend_failures += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} exact failure(s), {} trend failure(s), {:.1}s total",
        hard_failures,
        trend_failures,
        started.elapsed().as_secs_f64()
    );
    if hard_failures > 0 || (strict && trend_failures > 0) {
        std::process::exit(1);
    }
}

fn report(name: &str, o: &Outcome, t: Instant) {
    println!(
        "{} criterion {name}: {} ({:.2}s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        t.elapsed().as_secs_f64()
    );
}

fn twr_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_ideal: f64 = 0.0;
    let mut worst_rel: f64 = 0.0;
    let eps = TWR_DRIFT_PPM * 1e-6;
    for _ in 0..1000 {
        let tof = rng.random_range(0.001..0.5); // us, up to 150 m
        let reply_a = rng.random_range(100.0..5000.0);
        let reply_b = rng.random_range(100.0..5000.0);
        // Poll -> response -> final; each interval as its own clock sees it.
        let round1 = 2.0 * tof + reply_b;
        let round2 = 2.0 * tof + reply_a;
        let ideal = TwrTimestamps::new(round1, reply_b, round2, reply_a);
        let est = tof_from_timestamps(&ideal).expect("physical");
        worst_ideal = worst_ideal.max((est - tof).abs());
        // Responder clock fast by eps: it measures reply_b and round2.
        let drifted = TwrTimestamps::new(round1, reply_b * (1.0 + eps), round2 * (1.0 + eps), reply_a);
        let est = tof_from_timestamps(&drifted).expect("physical");
        worst_rel = worst_rel.max(((est - tof) / tof).abs());
    }
    outcome(
        worst_ideal <= TWR_IDEAL_TOL_US && worst_rel < TWR_DRIFT_REL_TOL,
        format!(
            "max ideal error {:.2e} ps, max relative error at {TWR_DRIFT_PPM} ppm {worst_rel:.2e}",
            worst_ideal * 1e6
        ),
    )
}

fn slot_accounting() -> Outcome {
    let mut bad = Vec::new();
    for n in 1..=20usize {
        let tofs: Vec<f64> = (0..n).map(|k| 0.01 * (k + 1) as f64).collect();
        let replay = replay_aggregated_session(1000.0, &tofs, &vec![0.0; n]).expect("replay");
        let inits = replay.frames.iter().filter(|(_, f)| matches!(f, Frame::Init)).count();
        let polls = replay.frames.iter().filter(|(_, f)| matches!(f, Frame::Poll(_))).count();
        let resps = replay.frames.iter().filter(|(_, f)| matches!(f, Frame::Response)).count();
        let finals = replay.frames.iter().filter(|(_, f)| matches!(f, Frame::Final(_))).count();
        let distinct: BTreeSet<u32> = replay.frames.iter().map(|(s, _)| *s).collect();
        let expected = 2 * n as u32 + 2;
        let tof_ok = replay
            .exchanges
            .iter()
            .zip(&tofs)
            .all(|(x, t)| (tof_from_timestamps(x).expect("physical") - t).abs() < 1e-9);
        let ok = slots_for_aggregated_session(n).ok() == Some(expected)
            && replay.slot_count() == expected
            && distinct.len() as u32 == expected
            && (inits, polls, resps, finals) == (1, n, 1, n)
            && tof_ok;
        if !ok {
            bad.push(n);
        }
    }
    outcome(bad.is_empty(), format!("N in 1..=20, mismatches at {bad:?}"))
}

/// Largest vertex set whose induced subgraph has minimum degree >= k, by
/// enumerating subsets (the union of all such sets is itself one).
fn brute_core(n: usize, adj: &[Vec<bool>], k: usize) -> BTreeSet<usize> {
    let mut union = 0u32;
    for mask in 1u32..(1 << n) {
        let ok = (0..n)
            .filter(|&i| mask & (1 << i) != 0)
            .all(|i| (0..n).filter(|&j| mask & (1 << j) != 0 && adj[i][j]).count() >= k);
        if ok {
            union |= mask;
        }
    }
    (0..n).filter(|&i| union & (1 << i) != 0).collect()
}

fn k_core_brute_force() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=10usize);
        let p = rng.random_range(0.1..0.9);
        let mut adj = vec![vec![false; n]; n];
        let mut g = ConnectivityGraph::with_nodes(0..n as NodeId);
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(p) {
                    adj[i][j] = true;
                    adj[j][i] = true;
                    g.set_link(i as NodeId, j as NodeId, dynoloc::metrics::LinkQuality::new(1.0, 0.0))
                        .expect("distinct");
                }
            }
        }
        let d = k_core_decompose(&g);
        let three = brute_core(n, &adj, 3);
        let two = brute_core(n, &adj, 2);
        for i in 0..n {
            let expected = if three.contains(&i) {
                3
            } else if two.contains(&i) {
                2
            } else {
                1
            };
            if d.core_of(i as NodeId) != expected {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("200 graphs, {mismatches} node mismatches"))
}

fn cmds_case(points: &[Point2]) -> (f64, f64, f64) {
    let ids: Vec<NodeId> = (0..points.len() as NodeId).collect();
    let emb = cmds_embed(&PartialEdm::from_points(ids.clone(), points)).expect("embeds");
    let est: Vec<Point2> = ids.iter().map(|i| emb.coordinates[i]).collect();
    let (_, rmse) = procrustes_align(&est, points, true).expect("aligns");
    // Congruence check that does not go through any alignment.
    let mut worst: f64 = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            worst = worst.max((est[i].distance(est[j]) - points[i].distance(points[j])).abs());
        }
    }
    (rmse, worst, emb.strain)
}

fn cmds_recovery() -> Outcome {
    let square = [
        Point2::new(0.0, 0.0),
        Point2::new(1.0, 0.0),
        Point2::new(1.0, 1.0),
        Point2::new(0.0, 1.0),
    ];
    let mut cases = vec![square.to_vec()];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.random_range(3..=12);
        cases.push(
            (0..n)
                .map(|_| Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect(),
        );
    }
    let (mut rmse, mut pair, mut strain) = (0.0f64, 0.0f64, 0.0f64);
    for c in &cases {
        let (r, p, s) = cmds_case(c);
        rmse = rmse.max(r);
        pair = pair.max(p);
        strain = strain.max(s);
    }
    outcome(
        rmse < CMDS_RMSE_TOL && pair < CMDS_RMSE_TOL && strain < CMDS_STRAIN_TOL,
        format!("101 EDMs, max rmse {rmse:.1e} m, max pair error {pair:.1e} m, max strain {strain:.1e}"),
    )
}

fn edm_completion() -> Outcome {
    let mut e = PartialEdm::new(vec![0, 1, 2, 3]);
    let sides = [(0, 1), (1, 2), (2, 3), (0, 3)];
    for (a, b) in sides {
        e.set(a, b, 1.0, 0.0).expect("in range");
    }
    e.set(1, 3, 2f64.sqrt(), 0.0).expect("in range");
    let init = [
        Point2::new(0.1, -0.2),
        Point2::new(0.8, 0.3),
        Point2::new(1.3, 0.9),
        Point2::new(-0.2, 1.1),
    ];
    let done = complete_edm(&e, &init, CompletionParams::default()).expect("completes");
    let diag = done.edm.get(0, 2).expect("filled");
    let untouched =
        sides.iter().all(|&(a, b)| done.edm.get(a, b) == Some(1.0)) && done.edm.get(1, 3) == Some(2f64.sqrt());
    outcome(
        (diag - 2f64.sqrt()).abs() <= COMPLETION_TOL && untouched,
        format!("missing diagonal -> {diag:.4} m, measured entries untouched: {untouched}"),
    )
}

fn noiseless_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let nodes = (0..12)
        .map(|i| NodeSpec {
            id: i,
            position: [rng.random_range(1.0..29.0), rng.random_range(1.0..29.0)],
            path: vec![],
            speed: 0.0,
            is_reference: i == 0,
            heading_deg: rng.random_range(0.0..360.0),
        })
        .collect();
    let scenario = Scenario {
        arena: Arena {
            width: 30.0,
            height: 30.0,
        },
        walls: vec![],
        nodes,
        radio: ChannelParams::noiseless(),
        // Nothing moves, so headings carry no rotation; the surveyed
        // deployment is the only orientation prior.
        run: RunParams {
            epochs: 10,
            ..Default::default()
        },
    };
    let records = run_scenario(&scenario).expect("valid");
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for r in &records {
        for n in &r.nodes {
            match n.estimate {
                Some(p) if n.localized => worst = worst.max(p.distance(n.truth)),
                _ => missing += 1,
            }
        }
    }
    outcome(
        worst < NOISELESS_TOL && missing == 0,
        format!("10 epochs x 12 nodes, max error {worst:.2e} m, unlocalized node-epochs {missing}"),
    )
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

fn determinism() -> Outcome {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let tmp = tempfile::tempdir().expect("tempdir");
    let mut notes = Vec::new();
    let mut pass = true;
    for (file, strategy) in [("desk_scale.toml", "dynoloc"), ("small_room.toml", "random")] {
        let mut hashes = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{file}-{strategy}-{run}"));
            let status = Command::new(env!("CARGO_BIN_EXE_dynoloc"))
                .args(["run", "--seed", "7", "--strategy", strategy, "--scenario"])
                .arg(root.join(file))
                .arg("--out")
                .arg(&out)
                .output()
                .expect("binary runs");
            pass &= status.status.success();
            let bytes = std::fs::read(out.join("epochs.csv")).unwrap_or_default();
            hashes.push((fnv1a(&bytes), bytes.len()));
        }
        pass &= hashes[0] == hashes[1] && hashes[0].1 > 0;
        notes.push(format!("{file}/{strategy} {:016x}={:016x}", hashes[0].0, hashes[1].0));
    }
    outcome(pass, notes.join(", "))
}

fn desk(strategy: Strategy, mobile_fraction: f64, rate: f64, seed: u64, tweak: impl Fn(&mut RunParams)) -> Scenario {
    let mut run = RunParams {
        seed,
        strategy,
        refresh_rate: rate,
        ..Default::default()
    };
    tweak(&mut run);
    Scenario::desk_scale(&DeskScale {
        mobile_fraction,
        run,
        ..Default::default()
    })
}

/// Median over seeds of each run's median error.
fn seeded_median(make: impl Fn(u64) -> Scenario + Sync) -> f64 {
    let runs: Vec<RunSummary> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| evaluate_run(&run_scenario(&make(seed)).expect("valid scenario")))
        .collect();
    median(&runs.iter().map(|r| r.median_error).filter(|v| v.is_finite()).collect::<Vec<_>>()).unwrap_or(f64::NAN)
}

fn headline_accuracy() -> Outcome {
    let dyno = seeded_median(|s| desk(Strategy::Dynoloc, 0.5, 1.0, s, |_| {}));
    let agnos = seeded_median(|s| desk(Strategy::HAgnos, 0.5, 1.0, s, |_| {}));
    outcome(
        dyno < HEADLINE_BOUND_M && agnos > HEADLINE_RATIO * dyno,
        format!(
            "dynoloc {dyno:.3} m (< {HEADLINE_BOUND_M}), h-agnos {agnos:.3} m ({:.2}x, need > {HEADLINE_RATIO}x)",
            agnos / dyno
        ),
    )
}

fn refresh_sweep() -> Outcome {
    let rates = [0.5, 1.0, 2.0, 4.0];
    let agnos: Vec<f64> = rates
        .iter()
        .map(|&r| seeded_median(|s| desk(Strategy::HAgnos, 0.5, r, s, |_| {})))
        .collect();
    let d1 = seeded_median(|s| desk(Strategy::Dynoloc, 0.5, 1.0, s, |_| {}));
    let d2 = seeded_median(|s| desk(Strategy::Dynoloc, 0.5, 2.0, s, |_| {}));
    let monotone = agnos.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        d2 < SWEEP_RATIO * d1 && monotone,
        format!(
            "dynoloc 1 Hz {d1:.3} / 2 Hz {d2:.3} m; h-agnos at 0.5/1/2/4 Hz {:.3}/{:.3}/{:.3}/{:.3} m (monotone: {monotone})",
            agnos[0], agnos[1], agnos[2], agnos[3]
        ),
    )
}

fn mobility_sweep() -> Outcome {
    let dyno = seeded_median(|s| desk(Strategy::Dynoloc, 1.0, 1.0, s, |_| {}));
    let hdyn = seeded_median(|s| desk(Strategy::HDyn, 1.0, 1.0, s, |_| {}));
    let agnos = seeded_median(|s| desk(Strategy::HAgnos, 1.0, 1.0, s, |_| {}));
    outcome(
        dyno < hdyn && hdyn < agnos,
        format!("all mobile: dynoloc {dyno:.3} m, h-dyn {hdyn:.3} m, h-agnos {agnos:.3} m (need increasing)"),
    )
}

fn link_quality_ablation() -> Outcome {
    let with = seeded_median(|s| desk(Strategy::Dynoloc, 0.5, 1.0, s, |_| {}));
    let without = seeded_median(|s| desk(Strategy::Dynoloc, 0.5, 1.0, s, |r| r.use_link_quality = false));
    let gain = without / with - 1.0;
    outcome(
        gain >= ABLATION_MIN_GAIN,
        format!(
            "six walls: with quality {with:.3} m, without {without:.3} m ({:+.1}%, need >= +{:.0}%)",
            100.0 * gain,
            100.0 * ABLATION_MIN_GAIN
        ),
    )
}

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn link_quality_discrimination() -> Outcome {
    let walls: Vec<Segment> = desk_walls()
        .iter()
        .map(|w: &WallSpec| Segment::new(Point2::new(w.start[0], w.start[1]), Point2::new(w.end[0], w.end[1])))
        .collect();
    let params = ChannelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut lq, mut err) = (Vec::new(), Vec::new());
    let mut nlos = 0;
    while lq.len() < LQ_LINKS {
        let a = Point2::new(rng.random_range(0.0..50.0), rng.random_range(0.0..40.0));
        let b = Point2::new(rng.random_range(0.0..50.0), rng.random_range(0.0..40.0));
        let link = simulate_link(a, b, &walls, &params);
        if !link.connected {
            continue;
        }
        let cir = synthesize_cir_features(link.is_los, link.wall_count, &mut rng);
        let q = link_quality_from_cir(&cir, 0.0);
        let d = a.distance(b);
        let r = measure_range(d, link.is_los, link.wall_count, &params, &mut rng);
        nlos += usize::from(!link.is_los);
        lq.push(q.value);
        err.push((r - d).abs());
    }
    let rho = spearman(&lq, &err);
    outcome(
        rho <= LQ_MAX_SPEARMAN,
        format!("{LQ_LINKS} links ({nlos} through walls), Spearman rho {rho:.3} (need <= {LQ_MAX_SPEARMAN})"),
    )
}

/// Ten tags inside a 20 m circle in an open hall; the reference sits at
/// the centre and half the others walk chords of the circle.
fn twenty_metre_component(seed: u64, sigma_deg: f64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let centre = [20.0, 20.0];
    let in_disk = |rng: &mut ChaCha8Rng| {
        let r = 10.0 * rng.random_range(0.0f64..1.0).sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        [centre[0] + r * a.cos(), centre[1] + r * a.sin()]
    };
    let nodes = (0..10)
        .map(|i| {
            let mobile = (1..=5).contains(&i);
            NodeSpec {
                id: i,
                position: if i == 0 { centre } else { in_disk(&mut rng) },
                path: if mobile { (0..3).map(|_| in_disk(&mut rng)).collect() } else { vec![] },
                speed: if mobile { 1.0 } else { 0.0 },
                is_reference: i == 0,
                heading_deg: 0.0,
            }
        })
        .collect();
    Scenario {
        arena: Arena {
            width: 40.0,
            height: 40.0,
        },
        walls: vec![],
        nodes,
        radio: ChannelParams::default(),
        run: RunParams {
            seed,
            heading_noise_sigma: sigma_deg,
            ..Default::default()
        },
    }
}

fn heading_sensitivity() -> Outcome {
    let clean = seeded_median(|s| twenty_metre_component(s, 0.0));
    let noisy = seeded_median(|s| twenty_metre_component(s, HEADING_SIGMA_DEG));
    let added = noisy - clean;
    outcome(
        added < HEADING_MAX_ADDED_M,
        format!("sigma 0: {clean:.3} m, sigma {HEADING_SIGMA_DEG} deg: {noisy:.3} m, added {added:+.3} m (need < {HEADING_MAX_ADDED_M})"),
    )
}
