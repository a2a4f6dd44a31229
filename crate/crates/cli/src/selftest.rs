use std::sync::Arc;

use rcm_core::experiments::{
    self as ex, empirical_distribution, empirical_projections, pivotal_count_of, reference_exponents, Budget,
    CrossingEvent, Explorer, Protocol, Sampler,
};
use rcm_core::lattice::{build_box, BcSpec, BoundaryCondition};
use rcm_core::measure::{dual_parameter, duality_ratio_deviation, exact_distribution, self_dual_point, ModelParams};
use rcm_core::observable::{
    check_boundary_connection, check_free_arc_relation, check_massive_harmonicity, check_vertex_relation,
    massive_walk_identity, observable_exact, MassiveWalkParams,
};
use rcm_core::rng::child_stream;

type Check = (&'static str, fn() -> Result<(), String>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn duality() -> Result<(), String> {
    for q in [1.0, 1.5, 2.0, 4.0] {
        for k in 1..20 {
            let p = k as f64 / 20.0;
            let back = dual_parameter(dual_parameter(p, q), q);
            ensure((back - p).abs() < 1e-14, || format!("involution fails at p={p}, q={q}"))?;
        }
    }
    let psd = self_dual_point(2.0);
    ensure((psd - 2f64.sqrt() / (1.0 + 2f64.sqrt())).abs() < 1e-15, || format!("p_sd(2) = {psd}"))?;
    for (w, h) in [(1, 1), (2, 1)] {
        let d = build_box(w, h).map_err(|e| e.to_string())?;
        let dev = duality_ratio_deviation(&d, ModelParams::new(0.4, 2.0).unwrap()).map_err(|e| e.to_string())?;
        ensure(dev < 1e-10, || format!("duality ratio deviation {dev:e} on box({w},{h})"))?;
    }
    Ok(())
}

fn sweeny_law() -> Result<(), String> {
    let d = Arc::new(build_box(1, 1).unwrap());
    for bc in [BcSpec::Free, BcSpec::Wired] {
        let proto = Protocol {
            params: ModelParams::new(self_dual_point(2.0), 2.0).unwrap(),
            bc: bc.clone(),
            sampler: Sampler::Sweeny,
            budget: Budget {
                replicas: 4,
                samples_per_replica: 50_000,
                burn_in: 20,
                thin: 1,
            },
            seed: 1,
        };
        let emp = empirical_distribution(&d, &proto).map_err(|e| e.to_string())?;
        let exact = ex::exact_for(&d, proto.params, &bc).map_err(|e| e.to_string())?;
        let tv = exact.total_variation(&emp);
        ensure(tv < 0.02, || format!("Sweeny TV {tv} under {}", bc.label()))?;
    }
    Ok(())
}

fn coupling_law() -> Result<(), String> {
    let d = Arc::new(build_box(1, 1).unwrap());
    let ps = [0.3, self_dual_point(2.0), 0.8];
    let b = Budget {
        replicas: 4,
        samples_per_replica: 50_000,
        burn_in: 20,
        thin: 1,
    };
    let proj = empirical_projections(&d, 2.0, &BcSpec::Free, &ps, b, 2).map_err(|e| e.to_string())?;
    for (j, &p) in ps.iter().enumerate() {
        let exact = exact_distribution(&d, ModelParams::new(p, 2.0).unwrap(), &BoundaryCondition::Free).unwrap();
        let tv = exact.total_variation(&proj[j]);
        ensure(tv < 0.02, || format!("coupling projection TV {tv} at p={p}"))?;
    }
    Ok(())
}

fn observable_relations() -> Result<(), String> {
    let d = build_box(3, 2).unwrap();
    let bc = BoundaryCondition::Dobrushin { a: 0, b: 3 };
    for p in [0.4, self_dual_point(2.0), 0.7] {
        let params = ModelParams::new(p, 2.0).unwrap();
        let f = observable_exact(&d, &bc, params).map_err(|e| e.to_string())?;
        let dist = exact_distribution(&d, params, &bc).map_err(|e| e.to_string())?;
        let v = check_vertex_relation(&f);
        ensure(v < 1e-10, || format!("vertex relation {v:e} at p={p}"))?;
        let h = check_massive_harmonicity(&f).ok_or("no harmonic site")?;
        ensure(h < 1e-9, || format!("massive harmonicity {h:e} at p={p}"))?;
        let fa = check_free_arc_relation(&f).map_err(|e| e.to_string())?.ok_or("no free-arc site")?;
        ensure(fa < 1e-9, || format!("free-arc relation {fa:e} at p={p}"))?;
        let bl = check_boundary_connection(&f, &dist).map_err(|e| e.to_string())?;
        ensure(bl < 1e-10, || format!("boundary connection {bl:e} at p={p}"))?;
        let mw = massive_walk_identity(&f, &MassiveWalkParams::new(p)).map_err(|e| e.to_string())?;
        ensure(mw.residual < 1e-8, || format!("massive walk {:e} at p={p}", mw.residual))?;
    }
    Ok(())
}

fn exponents() -> Result<(), String> {
    for q in [1.0, 2.0, 3.0, 4.0] {
        let r = reference_exponents(q).map_err(|e| e.to_string())?;
        ensure((r.eta - 2.0 * r.xi1).abs() < 1e-15, || format!("eta != 2 xi1 at q={q}"))?;
    }
    let r2 = reference_exponents(2.0).unwrap();
    ensure((r2.xi4 - 35.0 / 24.0).abs() < 1e-14, || "xi4(2) != 35/24".into())
}

fn pivotals() -> Result<(), String> {
    use rand::Rng;
    let d = build_box(5, 5).unwrap();
    let ev = CrossingEvent::vertical(&d).map_err(|e| e.to_string())?;
    let mut exp = Explorer::new(&d);
    let mut rng = child_stream(99, 0);
    for _ in 0..200 {
        let open: Vec<bool> = (0..d.n_edges()).map(|_| rng.gen::<f64>() < 0.5).collect();
        let fast = pivotal_count_of(&d, &ev, &mut exp, &open);
        let base = ev.holds(&mut exp, &open);
        let mut o = open.clone();
        let mut slow = 0;
        for k in 0..o.len() {
            o[k] = !o[k];
            if ev.holds(&mut exp, &o) != base {
                slow += 1;
            }
            o[k] = !o[k];
        }
        ensure(fast == slow, || format!("pivotal count {fast} vs brute force {slow}"))?;
    }
    Ok(())
}

pub const CHECKS: [Check; 6] = [
    ("duality identities", duality),
    ("sweeny stationary law", sweeny_law),
    ("coupling projection law", coupling_law),
    ("observable relations", observable_relations),
    ("reference exponents", exponents),
    ("pivotal counting", pivotals),
];

/// Runs every check, printing one line each; returns the number of failures.
pub fn run() -> usize {
    let mut failures = 0;
    for (name, f) in CHECKS {
        match f() {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    failures
}
