//! Acceptance suite: one test per release criterion, each ending in a
//! single PASS line (visible with `--nocapture`; the test name itself is
//! the pass/fail line under the default harness). Tolerances are stated
//! inline; statistical bounds use fixed seeds.

use std::collections::BTreeMap;
use std::process::Command;

use latgas_cli::config::ExperimentConfig;
use latgas_cli::experiments::{
    run_coupling_audit, run_hydrodynamic_experiment, run_hydrostatic_experiment,
};
use latgas_core::flux::{model_flux, FluxTable, DEFAULT_DRHO};
use latgas_core::geometry::{DomainShape, LatticeDomain, SlabDomain};
use latgas_core::hydrostatics::{
    build_stationary_profile, bulk_density, phase_diagram, verify_stationary, PhaseLabel,
};
use latgas_core::marginal::marginal_for_density;
use latgas_core::model::{microscopic_flux, JumpKernel, ModelSpec, Site};
use latgas_core::pde::{default_bumps, default_c_grid, entropy_audit, solve_ibvp, Trajectory};
use latgas_core::rng::{stream, uniform};
use latgas_core::sim::{init_from_profile, run};

fn verdict(line: &str) {
    println!("PASS {line}");
}

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).expect("acceptance config parses")
}

fn tasep_flux() -> FluxTable {
    FluxTable::from_model(&ModelSpec::tasep(), [1.0, 0.0, 0.0], None).unwrap()
}

/// Criterion 1: coupled runs across the three model families total at
/// least 1e7 events with zero order-preservation and zero domination
/// violations (order is asserted per event; domination shows as a
/// vanishing positive-part discrepancy against the uniform-reservoir
/// copy).
#[test]
fn c01_coupled_event_budget_without_violations() {
    let base = |model: &str, la: f64, lb: f64, c: f64, rho_lo: f64| {
        format!(
            r#"
            {model}

            [domain]
            a = 0.0
            b = 1.0

            [boundary]
            lambda_a = {la}
            lambda_b = {lb}

            [run]
            n_list = [32]
            replicas = 8
            t_burn = 0.0
            t_end = 4.0
            times = [2.0, 4.0]
            cell_width = 0.05

            [couple]
            c = {c}
            rho_lo = {rho_lo}
            min_events = 3400000
        "#
        )
    };
    let models = [
        (base("[model]\nkind = \"tasep\"", 0.3, 0.45, 0.5, 0.2), "tasep"),
        (base("[model]\nkind = \"misanthrope-k3\"", 0.8, 1.4, 2.0, 0.5), "misanthrope-k3"),
        (
            base(
                "[model]\nkind = \"overtaking\"\naxes = [{ plus = [2.0, 1.0], minus = [] }]",
                0.3,
                0.6,
                0.8,
                0.3,
            ),
            "overtaking",
        ),
    ];
    let mut total = 0u64;
    for (text, name) in &models {
        let c = cfg(text);
        let res = run_coupling_audit(&c, 20_260_101).unwrap_or_else(|e| {
            panic!("{name}: coupling audit failed (order/domination violation?): {e}")
        });
        assert!(
            res.replicas.iter().all(|r| r.ordered),
            "{name}: componentwise order broke at a checkpoint"
        );
        let max_plus = res
            .replicas
            .iter()
            .flat_map(|r| r.phi.iter().map(|&(_, p, _)| p))
            .fold(0.0f64, f64::max);
        assert_eq!(max_plus, 0.0, "{name}: domination violated (discrepancy+ > 0)");
        assert!(
            res.events_total >= 3_400_000,
            "{name}: only {} coupled events",
            res.events_total
        );
        total += res.events_total;
    }
    assert!(total >= 10_000_000, "only {total} coupled events in total");
    verdict(&format!(
        "c01: {total} coupled events across three models, zero order or domination violations"
    ));
}

/// Criterion 2: under a uniform reservoir profile the product measure at
/// density c is invariant: site means at five probe sites match c within
/// three standard errors over 200 replicas.
#[test]
fn c02_uniform_reservoir_invariance() {
    let k3 = ModelSpec::misanthrope_k3(JumpKernel::delta(1, [1, 0, 0]).unwrap());
    for (mi, (spec, c)) in [(ModelSpec::tasep(), 0.5), (k3, 1.5)].into_iter().enumerate() {
        let shape = DomainShape::Slab(SlabDomain::axis_aligned(1, 0, 0.0, 1.0).unwrap());
        let mut lat =
            LatticeDomain::discretize(shape, 32, 1.0, spec.interaction_range()).unwrap();
        lat.set_reservoirs(spec.k_max(), c, c).unwrap();
        let n_sites = lat.sites().len();
        let probes: Vec<usize> = (0..5).map(|k| k * (n_sites - 1) / 4).collect();
        let replicas = 200;
        let mut samples = vec![Vec::with_capacity(replicas); probes.len()];
        for r in 0..replicas {
            let rng = stream(777, &[mi as u64, r as u64]);
            let mut st = init_from_profile(&spec, &lat, |_| c, rng).unwrap();
            run(&mut st, &spec, &lat, 1.0).unwrap();
            for (k, &p) in probes.iter().enumerate() {
                samples[k].push(st.eta()[p] as f64);
            }
        }
        for (k, vals) in samples.iter().enumerate() {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (vals.len() - 1) as f64;
            let se = (var / vals.len() as f64).sqrt();
            assert!(
                (mean - c).abs() <= 3.0 * se,
                "model {mi} probe {k}: mean {mean:.4} vs c = {c} (se {se:.4})"
            );
        }
    }
    verdict("c02: uniform-reservoir site means match c within 3 SE at 5 probes x 200 replicas");
}

/// Criterion 3: the tabulated model flux agrees with Monte Carlo averages
/// of the microscopic flux under product measures (3 SE at three densities
/// per model), and the overtaking flux matches its closed form.
#[test]
fn c03_flux_oracle_equivalence() {
    let delta = JumpKernel::delta(1, [1, 0, 0]).unwrap();
    let cases: Vec<(&str, ModelSpec, [f64; 3])> = vec![
        ("sep", ModelSpec::tasep(), [0.1, 0.5, 0.9]),
        (
            "misanthrope-k3",
            ModelSpec::misanthrope_k3(delta.clone()),
            [0.1, 0.5, 2.7],
        ),
        // The zero-range cap is unbounded; 2.0 exercises multi-occupancy.
        ("zero-range", ModelSpec::zero_range_unit(delta), [0.1, 0.5, 2.0]),
        (
            "overtaking",
            ModelSpec::overtaking_1d(&[2.0, 1.0], &[]).unwrap(),
            [0.1, 0.5, 0.9],
        ),
    ];
    for (ci, (name, spec, rhos)) in cases.iter().enumerate() {
        let reach = spec.interaction_range();
        for (ri, &rho) in rhos.iter().enumerate() {
            let exact = model_flux(spec, rho).unwrap()[0];
            let marg = marginal_for_density(rho, spec).unwrap();
            let mut rng = stream(4242, &[ci as u64, ri as u64]);
            let samples = 40_000;
            let (mut sum, mut sumsq) = (0.0, 0.0);
            for _ in 0..samples {
                let occ: Vec<u32> = (0..(4 * reach + 1))
                    .map(|_| marg.sample(uniform(&mut rng)))
                    .collect();
                let v = microscopic_flux(spec, |s: Site| occ[(s[0] + 2 * reach) as usize])[0];
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / samples as f64;
            let var = (sumsq / samples as f64 - mean * mean).max(0.0);
            let se = (var / samples as f64).sqrt();
            assert!(
                (mean - exact).abs() <= 3.0 * se + 1e-9,
                "{name} rho={rho}: MC {mean:.5} vs exact {exact:.5} (se {se:.2e})"
            );
        }
    }
    // Closed form for overtaking with beta = (2, 1): f = rho (1 - rho) (2 + 2 rho).
    let ov = ModelSpec::overtaking_1d(&[2.0, 1.0], &[]).unwrap();
    for k in 0..=20 {
        let rho = k as f64 / 20.0;
        let f = model_flux(&ov, rho).unwrap()[0];
        let closed = rho * (1.0 - rho) * (2.0 + 2.0 * rho);
        assert!(
            (f - closed).abs() < 1e-9,
            "overtaking closed form at rho={rho}: {f} vs {closed}"
        );
    }
    verdict("c03: model flux matches MC microscopic flux (3 SE) and the overtaking closed form");
}

/// Criterion 4: the solver reproduces the admissible Riemann shock within
/// two cells at t = 1 and conserves mass to 1e-12; the entropy audit
/// passes the solver's shock and fan solutions and fails a non-entropic
/// traveling jump.
#[test]
fn c04_riemann_shock_mass_and_entropy_audit() {
    let flux = tasep_flux();
    let dx = 1.0 / 400.0;
    let m = flux.lipschitz();
    let c_grid = default_c_grid(flux.k_max());
    let bumps = default_bumps(0.0, 1.0, 1.0);

    // Admissible shock: 0.2 over 0.9 jumps up, speed (f(0.9) - f(0.2)) /
    // (0.9 - 0.2) = -0.1, so the front sits at 0.4 at t = 1.
    let shock = solve_ibvp(
        &flux,
        |x| if x < 0.5 { 0.2 } else { 0.9 },
        0.2,
        0.9,
        0.0,
        1.0,
        1.0,
        dx,
        0.45,
    )
    .unwrap();
    let frame = shock.at_time(1.0);
    let centers = shock.cell_centers();
    let mid = 0.5 * (0.2 + 0.9);
    let cross = centers
        .iter()
        .zip(&frame)
        .find(|(_, &u)| u >= mid)
        .map(|(&x, _)| x)
        .expect("shock front inside the domain");
    assert!(
        (cross - 0.4).abs() <= 2.0 * shock.dx(),
        "shock front at {cross:.4}, expected 0.4 +- {:.4}",
        2.0 * shock.dx()
    );
    assert!(
        shock.mass_error() <= 1e-12,
        "mass balance defect {:.3e}",
        shock.mass_error()
    );
    let audit = entropy_audit(&shock, &flux, m, &c_grid, &bumps).unwrap();
    assert!(audit.pass, "shock audit failed: margin {:.3e}", audit.worst_margin);

    // Rarefaction orientation: same data reversed spreads into a fan.
    let fan = solve_ibvp(
        &flux,
        |x| if x < 0.5 { 0.9 } else { 0.2 },
        0.9,
        0.2,
        0.0,
        1.0,
        1.0,
        dx,
        0.45,
    )
    .unwrap();
    assert!(fan.mass_error() <= 1e-12);
    let audit = entropy_audit(&fan, &flux, m, &c_grid, &bumps).unwrap();
    assert!(audit.pass, "fan audit failed: margin {:.3e}", audit.worst_margin);

    // Counterexample: transporting the 0.9 | 0.2 jump unsplit at the
    // Rankine-Hugoniot speed satisfies the conservation law weakly but
    // violates the entropy conditions.
    let fake = Trajectory::from_fn(0.0, 1.0, 400, 1e-3, 1.0, 0.9, 0.2, |t, x| {
        if x < 0.5 - 0.1 * t {
            0.9
        } else {
            0.2
        }
    });
    let audit = entropy_audit(&fake, &flux, m, &c_grid, &bumps).unwrap();
    assert!(
        !audit.pass,
        "non-entropic jump passed the audit: margin {:.3e}",
        audit.worst_margin
    );
    verdict("c04: shock position within 2 cells, mass defect <= 1e-12, audit separates entropic from fake");
}

/// Criterion 5: empirical exclusion profiles converge to the entropy
/// solution: the L1 distance (cell width 0.02, >= 20 replicas) decreases
/// monotonically over N in {50, 100, 200, 400} and is below 0.05 at
/// N = 400 for both checkpoint times.
#[test]
fn c05_hydrodynamic_l1_convergence() {
    let c = cfg(r#"
        [model]
        kind = "tasep"

        [domain]
        a = 0.0
        b = 1.0

        [boundary]
        lambda_a = 0.9
        lambda_b = 0.2

        [initial]
        kind = "step"
        left = 0.9
        right = 0.2
        at = 0.5

        [run]
        n_list = [50, 100, 200, 400]
        replicas = 20
        times = [0.25, 0.5]
        cell_width = 0.02

        [pde]
        dx = 0.0025
    "#);
    let res = run_hydrodynamic_experiment(&c, 31_337).unwrap();
    for (ti, &t) in [0.25, 0.5].iter().enumerate() {
        let per_n: Vec<_> = res.rows.iter().skip(ti * 4).take(4).collect();
        for w in per_n.windows(2) {
            assert!(
                w[1].l1 < w[0].l1,
                "t={t}: L1 not monotone: N={} gives {:.4}, N={} gives {:.4}",
                w[0].n,
                w[0].l1,
                w[1].n,
                w[1].l1
            );
        }
        let last = per_n.last().unwrap();
        assert!(
            last.l1 < 0.05,
            "t={t}: L1 = {:.4} at N = 400 (needs < 0.05)",
            last.l1
        );
    }
    let seq: Vec<String> =
        res.rows.iter().map(|r| format!("{:.3}", r.l1)).collect();
    verdict(&format!(
        "c05: L1 to the entropy solution decreases over N = 50..400 and ends < 0.05 [{}]",
        seq.join(", ")
    ));
}

/// Criterion 6: stationary bulk densities at N = 400 match the
/// flux-extremization predictions within 0.03 in all three phases, for
/// exclusion and for the overtaking model (whose flux is
/// rho (1 - rho) (2 + 2 rho)).
#[test]
fn c06_hydrostatic_bulk_predictions() {
    let base = |model: &str| {
        format!(
            r#"
            {model}

            [domain]
            a = 0.0
            b = 1.0

            [boundary]
            lambda_a = 0.2
            lambda_b = 0.6

            [[points]]
            lambda_a = 0.2
            lambda_b = 0.6

            [[points]]
            lambda_a = 0.3
            lambda_b = 0.9

            [[points]]
            lambda_a = 0.8
            lambda_b = 0.2

            [run]
            n_list = [400]
            replicas = 4
            t_burn = 8.0
            t_end = 24.0
            cell_width = 0.02
        "#
        )
    };
    let inv_sqrt3 = 1.0 / 3.0f64.sqrt();
    let cases = [
        ("[model]\nkind = \"tasep\"", [(0.2, "LD"), (0.9, "HD"), (0.5, "MC")]),
        (
            "[model]\nkind = \"overtaking\"\naxes = [{ plus = [2.0, 1.0], minus = [] }]",
            [(0.2, "LD"), (0.9, "HD"), (inv_sqrt3, "MC")],
        ),
    ];
    for (model, expected) in cases {
        let c = cfg(&base(model));
        let res = run_hydrostatic_experiment(&c, 97).unwrap();
        assert_eq!(res.rows.len(), 3);
        for (row, (want, label)) in res.rows.iter().zip(expected) {
            assert_eq!(row.label, label, "({}, {})", row.lambda_a, row.lambda_b);
            let pred = row.predicted.unwrap();
            assert!(
                (pred - want).abs() < 1e-6,
                "prediction {pred} vs analytic {want} at ({}, {})",
                row.lambda_a,
                row.lambda_b
            );
            assert!(
                (row.bulk - want).abs() <= 0.03,
                "{model} ({}, {}): bulk {:.4} vs {want:.4} (se {:.4})",
                row.lambda_a,
                row.lambda_b,
                row.bulk,
                row.bulk_se
            );
        }
    }
    verdict("c06: simulated bulks match flux extremization within 0.03 in LD/HD/MC, both models");
}

/// Criterion 7: the phase classifier finds exactly three regions for the
/// single-hump exclusion flux with the coexistence line at
/// lambda_a + lambda_b = 1, lambda_a < 1/2, and exactly seven regions for
/// a double-hump flux.
#[test]
fn c07_phase_region_counts() {
    let flux = tasep_flux();
    let diag = phase_diagram(&flux, 32);
    assert_eq!(diag.region_counts, [1, 1, 1, 0], "LD/HD/MC/mC region counts");
    assert_eq!(diag.total_regions(), 3);
    // Coexistence exactly on lambda_a + lambda_b = k_max with lambda_a
    // below the maximizer.
    for &(i, j) in &diag.coexistence_cells {
        assert_eq!(i + j, 32, "coexistence node off the antidiagonal");
        assert!(i < 16, "coexistence node beyond the maximizer");
    }
    assert!(!diag.coexistence_cells.is_empty());
    for la in [0.125, 0.25, 0.375, 0.46875] {
        let pp = bulk_density(&flux, la, 1.0 - la);
        assert_eq!(pp.label, PhaseLabel::Coexistence, "on-line point ({la}, {})", 1.0 - la);
        let off = bulk_density(&flux, la, 1.0 - la - 0.06);
        assert_ne!(off.label, PhaseLabel::Coexistence, "off-line point mislabeled");
    }

    let double_hump = FluxTable::from_fn(1.0, DEFAULT_DRHO, |r| {
        r * (1.0 - r) * ((r - 0.5) * (r - 0.5) + 0.02)
    })
    .unwrap();
    let diag2 = phase_diagram(&double_hump, 32);
    assert_eq!(
        diag2.total_regions(),
        7,
        "double-hump regions {:?}",
        diag2.region_counts
    );
    verdict("c07: 3 phases + coexistence line for one hump, 7 phases for two humps");
}

/// Criterion 8: a two-step profile with both coexistence extremizers is a
/// stationary entropy solution: it passes the stationary audit and drifts
/// less than 0.02 in L1 after one crossing time under the solver.
#[test]
fn c08_coexistence_two_step_is_stationary() {
    let flux = tasep_flux();
    let profile = build_stationary_profile(
        &flux,
        0.3,
        0.7,
        vec![0.0, 0.6, 1.0],
        vec![0.3, 0.7],
    )
    .unwrap();
    let chk = verify_stationary(&profile, &flux, flux.lipschitz(), 1.0 / 400.0, 0.45).unwrap();
    assert!(
        chk.audit.pass,
        "stationary audit failed: margin {:.3e}",
        chk.audit.worst_margin
    );
    assert!(
        chk.l1_drift < 0.02,
        "profile drifted {:.4} in L1 over one crossing time {:.2}",
        chk.l1_drift,
        chk.t_cross
    );
    verdict(&format!(
        "c08: two-step coexistence profile stationary (audit pass, drift {:.2e} < 0.02)",
        chk.l1_drift
    ));
}

/// Criterion 9: on a notched two-dimensional slab with a drift-along-axis
/// overtaking model, the collar density matches the left reservoir within
/// 0.04 at a low-density point and stays inside the predicted
/// [bulk, lambda_a] band (0.04 slack) at a maximal-current point.
#[test]
fn c09_notched_slab_collar_densities() {
    let c = cfg(r#"
        [model]
        kind = "overtaking"
        axes = [{ plus = [1.0], minus = [] }, { plus = [0.5], minus = [0.5] }]

        [domain]
        d = 2
        a = 0.0
        b = 1.0
        width = 1.0
        notch = { a_outer = -0.25, t_lo = 0.0, t_hi = 0.25 }

        [boundary]
        lambda_a = 0.2
        lambda_b = 0.6

        [[points]]
        lambda_a = 0.2
        lambda_b = 0.6

        [[points]]
        lambda_a = 0.8
        lambda_b = 0.2

        [run]
        n_list = [48]
        replicas = 4
        t_burn = 6.0
        t_end = 18.0
        cell_width = 0.0625
    "#);
    let res = run_hydrostatic_experiment(&c, 1_009).unwrap();
    let collar = |la: f64| {
        res.regions
            .iter()
            .find(|r| r.lambda_a == la && r.region == "collar-a")
            .expect("collar-a region present")
    };
    let ld = collar(0.2);
    assert!(
        (ld.mean - 0.2).abs() <= 0.04,
        "LD collar density {:.4} vs lambda_a = 0.2 (band {:?})",
        ld.mean,
        ld.band
    );
    let mc = collar(0.8);
    assert_eq!(mc.band, (0.5, 0.8), "MC collar band is [bulk, lambda_a]");
    assert!(
        mc.mean >= 0.5 - 0.04 && mc.mean <= 0.8 + 0.04,
        "MC collar density {:.4} outside [0.46, 0.84]",
        mc.mean
    );
    // The inner bulk should still follow the slab prediction.
    for (row, want) in res.rows.iter().zip([0.2, 0.5]) {
        assert!(
            (row.bulk - want).abs() <= 0.04,
            "inner bulk {:.4} vs {want} at ({}, {})",
            row.bulk,
            row.lambda_a,
            row.lambda_b
        );
    }
    verdict(&format!(
        "c09: notched-slab collar densities {:.3} (LD, target 0.2) and {:.3} (MC, band [0.5, 0.8])",
        ld.mean, mc.mean
    ));
}

/// Criterion 10: identical (config, seed) inputs reproduce the full output
/// bundle byte-for-byte, independent of the worker count.
#[test]
fn c10_byte_identical_reruns() {
    let tmp = std::env::temp_dir().join(format!("latgas-c10-{}", std::process::id()));
    std::fs::create_dir_all(&tmp).unwrap();
    let config_path = tmp.join("exp.toml");
    std::fs::write(
        &config_path,
        r#"
        [model]
        kind = "tasep"

        [domain]
        a = 0.0
        b = 1.0

        [boundary]
        lambda_a = 0.9
        lambda_b = 0.2

        [initial]
        kind = "step"
        left = 0.9
        right = 0.2
        at = 0.5

        [run]
        n_list = [50, 100]
        replicas = 4
        seed = 99
        times = [0.25]
        cell_width = 0.02

        [pde]
        dx = 0.01

        [check]
        monotone = true
    "#,
    )
    .unwrap();
    let exe = env!("CARGO_BIN_EXE_latgas");
    let mut bundles: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
    for (i, workers) in ["1", "3"].iter().enumerate() {
        let out_dir = tmp.join(format!("out{i}"));
        let status = Command::new(exe)
            .args([
                "hydro-convergence",
                "--config",
                config_path.to_str().unwrap(),
                "--out",
                out_dir.to_str().unwrap(),
                "--workers",
                workers,
            ])
            .status()
            .expect("binary runs");
        assert!(status.success(), "run {i} exited with {status}");
        // Exactly one bundle directory per run.
        let mut dirs: Vec<_> = std::fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        dirs.sort();
        assert_eq!(dirs.len(), 1);
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(&dirs[0]).unwrap() {
            let path = entry.unwrap().path();
            files.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            );
        }
        assert!(files.len() >= 4, "bundle has {} files", files.len());
        bundles.push(files);
    }
    let names: Vec<&String> = bundles[0].keys().collect();
    assert_eq!(
        names,
        bundles[1].keys().collect::<Vec<_>>(),
        "bundles contain different files"
    );
    for (name, bytes) in &bundles[0] {
        assert_eq!(
            bytes,
            &bundles[1][name],
            "{name} differs between identically seeded runs"
        );
    }
    std::fs::remove_dir_all(&tmp).ok();
    verdict(&format!(
        "c10: {} output files byte-identical across reruns with different worker counts",
        bundles[0].len()
    ));
}
