use contour_mpc::contour::Tolerance;
use contour_mpc::gantry::{compile_offline, reference_path, GantryParams, Tuning};
use std::time::Instant;

fn main() {
    let t = Instant::now();
    let art = compile_offline(
        &GantryParams::default(),
        &reference_path(),
        Tolerance::new(0.004).unwrap(),
        &Tuning::default(),
    )
    .unwrap();
    eprintln!("compile_offline: {:?}", t.elapsed());
    eprintln!("iterations_used: {}", art.family.iterations_used);
    for (id, c) in &art.family.sets {
        eprintln!("mode {id}: {} rows, empty {}", c.num_rows(), c.is_empty().unwrap());
    }
}
