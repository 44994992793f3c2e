//! Relative localization from an incomplete distance matrix: fill the gaps,
//! then embed with classical MDS and compare with the truth.
//!
//! cargo run --example edm_mds

use dynoloc::geometry::procrustes_align;
use dynoloc::relloc::{cmds_embed, complete_edm, shortest_path_fill, CompletionParams, PartialEdm};
use dynoloc::Point2;

fn main() -> dynoloc::Result<()> {
    let truth = [
        Point2::new(0.0, 0.0),
        Point2::new(10.0, 0.0),
        Point2::new(10.0, 8.0),
        Point2::new(0.0, 8.0),
        Point2::new(5.0, 4.0),
        Point2::new(14.0, 4.0),
    ];
    let ids: Vec<u32> = (0..truth.len() as u32).collect();
    let mut e = PartialEdm::new(ids.clone());
    // Everything except the two long diagonals and one far pair.
    let missing = [(0, 2), (1, 3), (0, 5)];
    for i in 0..truth.len() {
        for j in i + 1..truth.len() {
            if !missing.contains(&(i, j)) {
                e.set_index(i, j, truth[i].distance(truth[j]), 0.0);
            }
        }
    }
    println!("{} of {} pairs measured", e.measured_count(), truth.len() * (truth.len() - 1) / 2);

    let init = cmds_embed(&shortest_path_fill(&e))?;
    let init: Vec<Point2> = ids.iter().map(|n| init.coordinates[n]).collect();
    let done = complete_edm(&e, &init, CompletionParams::default())?;
    for &(i, j) in &missing {
        println!(
            "d({i},{j}) filled {:.3} m, true {:.3} m",
            done.edm.get_index(i, j).unwrap_or(f64::NAN),
            truth[i].distance(truth[j])
        );
    }

    let emb = cmds_embed(&done.edm)?;
    let est: Vec<Point2> = ids.iter().map(|n| emb.coordinates[n]).collect();
    let (_, rmse) = procrustes_align(&est, &truth, true)?;
    println!("{} sweeps, embedding RMSE after alignment {rmse:.2e} m, strain {:.2e}", done.sweeps, emb.strain);
    Ok(())
}
