mod common;

use afba::problem_file::{default_variant, Model};
use afba::problems::{gen_admm3, Admm3Dims};
use afba::report::RunOptions;
use afba::variants::{build_admm3, run, Solver};
use common::*;

#[test]
fn presets_match_their_engine_form() {
    let opts = RunOptions::default().with_tol(0.0).with_max_iter(1000).keep_all();
    let mut checked = 0;
    for (inst, spec) in fejer_matrix() {
        let mut s = build(&inst, &spec);
        let Some(engine) = s.engine() else { continue };
        let engine = engine.unwrap_or_else(|e| panic!("{} / {}: {e}", inst.name, spec.name));
        let z0 = s.default_start().map(|_| 0.5);
        let a = run(s.as_mut(), &z0, &opts);
        let b = engine.run(&s.to_engine_coords(&z0), &opts);
        for (k, (_, z)) in a.iterates.iter().enumerate() {
            let w = &b.iterates[k.min(b.iterates.len() - 1)].1;
            let d = rel_diff(&s.to_engine_coords(z), w);
            assert!(d <= 1e-12, "{} / {} diverges by {d:e} at {k}", inst.name, spec.name);
        }
        checked += 1;
    }
    assert!(checked >= 15, "only {checked} presets cross-checked");
}

#[test]
fn bac_and_dst_relaxations_stay_in_range() {
    for inst in fixtures() {
        let model = inst.model();
        for name in ["bac", "dst"] {
            let Ok(spec) = default_variant(name, &model) else { continue };
            let Ok(mut s) = afba::problem_file::build_solver(&model, &spec) else { continue };
            let delta = s.certificate().delta;
            let z0 = s.default_start();
            let rep = run(s.as_mut(), &z0, &RunOptions::default().with_max_iter(500));
            for r in &rep.rows {
                assert!(r.lambda > 0.0 && r.lambda < delta, "{name} on {}: λ = {} vs δ = {delta}", inst.name, r.lambda);
            }
        }
    }
}

#[test]
fn admm_update_order_commutes() {
    let inst = gen_admm3(9, Admm3Dims::default());
    let Model::Admm3(p) = inst.model() else { unreachable!() };
    let opts = RunOptions::default().with_tol(0.0).with_max_iter(300);
    let mut a = build_admm3(p.clone(), 0.05, 1.5).unwrap();
    let mut b = build_admm3(p, 0.05, 1.5).unwrap();
    b.swap_order = true;
    let ra = a.run(&a.default_start(), &opts);
    let rb = b.run(&b.default_start(), &opts);
    assert_eq!(ra.final_z, rb.final_z);
}
