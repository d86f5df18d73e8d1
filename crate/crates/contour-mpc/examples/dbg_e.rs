use contour_mpc::contour::Tolerance;
use contour_mpc::gantry::{prepare_offline, reference_path, scenario_reach_op, GantryParams, Tuning};
use contour_mpc::invariance::ReachOp;

fn main() {
    let prep = prepare_offline(
        &GantryParams::default(),
        &reference_path(),
        Tolerance::new(0.004).unwrap(),
        &Tuning::default(),
    )
    .unwrap();
    let op = scenario_reach_op(&prep.composite, &prep.plan).unwrap();
    let ReachOp::Feedback { policies } = &op else { unreachable!() };
    let m4 = prep.composite.iter().find(|m| m.mode_id == 4).unwrap();
    let m5 = prep.composite.iter().find(|m| m.mode_id == 5).unwrap();
    let edge = op
        .reach(m5, &m5.s, &m5.s, &prep.cfg.u_set, prep.graph.dwell_of(5), Some(&m4.s))
        .unwrap();
    let cur = m4.s.intersect(&edge).unwrap().remove_redundant().unwrap();
    eprintln!("cur rows {}, empty {}", cur.num_rows(), cur.is_empty().unwrap());
    let (lo, hi) = cur.bounding_box().unwrap();
    eprintln!("cur box lo {:?}", lo.as_slice());
    eprintln!("cur box hi {:?}", hi.as_slice());
    // where is mode 5's reference start?
    let x0 = &policies[&5].x_ref[0];
    let (ca, cb) = cur.rows();
    eprintln!("x_ref5[0] = {:?}, residual in cur {:.4e}", x0.as_slice(), (ca * x0 - cb).max());
    // rest state at same position
    let mut xr = x0.clone();
    xr[1] = 0.0;
    xr[3] = 0.0;
    eprintln!("rest at handoff residual in cur {:.4e}", (ca * &xr - cb).max());
    let onestep = op.reach(m4, &m4.s, &cur, &prep.cfg.u_set, 1, None).unwrap();
    eprintln!("one-step rows {}, empty {}", onestep.num_rows(), onestep.is_empty().unwrap());
    let both = cur.intersect(&onestep).unwrap();
    eprintln!("cur ∩ onestep empty: {}", both.is_empty().unwrap());
}
