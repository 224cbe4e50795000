use hgtrack::ingest::{ingest, write_bundle, BUNDLE_FILES};
use hgtrack::inventory::{emission_delta_apcd, emission_delta_pge, emission_sus, group_totals, GroupKey, Measure};
use hgtrack::scenario::{Engine, PlantFilter, Scenario};
use hgtrack::transport::{build_srm, max_stable_dt, simulate, Boundary, EmissionField, SpeciesRates, TransportParams};
use hgtrack::{demo, ApcdConfig, GridSpec, Plant, PlantId, PlantStatus, ProvinceParams, SpeciatedMass, Speciation};
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn mass_close(a: &SpeciatedMass, b: &SpeciatedMass, tol: f64) -> bool {
    let scale = [a.hg0, a.hg2, a.hgp, b.hg0, b.hg2, b.hgp].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    [(a.hg0, b.hg0), (a.hg2, b.hg2), (a.hgp, b.hgp)].iter().all(|(x, y)| (x - y).abs() <= tol * scale)
}

fn shares() -> impl Strategy<Value = Speciation> {
    (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_filter_map("nonzero", |(a, b, c)| {
        let s = a + b + c;
        (s > 1e-3).then(|| {
            let (x, y) = (a / s, b / s);
            Speciation::new(x, y, (1.0 - x - y).max(0.0))
        })
    })
}

fn apcd() -> impl Strategy<Value = ApcdConfig> {
    (0.0..=1.0f64, shares()).prop_map(|(eta, s)| ApcdConfig::new("X", eta, s))
}

fn province() -> impl Strategy<Value = ProvinceParams> {
    (0.0..2.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(a, q, w, r)| ProvinceParams {
        id: "P".into(),
        coal_hg: a,
        washed_fraction: q,
        washing_removal: w,
        release_ratio: r,
    })
}

fn plant() -> impl Strategy<Value = Plant> {
    (
        (1.0..3000.0f64, 0.0..1e7f64, 0.0..1e7f64, 0.0..1e10f64),
        (200.0..450.0f64, 200.0..450.0f64),
        apcd(),
        apcd(),
        prop_oneof![Just("Alpha"), Just("Beta"), Just("Gamma")],
    )
        .prop_map(|((mw, c1, c2, pw), (r1, r2), a1, mut a2, company)| {
            a2.combo = "Y".into();
            Plant {
                id: "X".into(),
                province: "P".into(),
                company: company.into(),
                capacity_mw: mw,
                lat: 0.0,
                lon: 0.0,
                coal_t1: c1,
                coal_t2: c2,
                power_t2: pw,
                ccr_t1: r1,
                ccr_t2: r2,
                apcd_t1: a1,
                apcd_t2: a2,
                release_ratio: None,
                status: PlantStatus::Active,
            }
        })
}

proptest! {
    #[test]
    fn shutdown_emission_is_nonnegative(mut p in plant(), prov in province()) {
        p.status = PlantStatus::Decommissioned;
        let e = emission_sus(&p, &prov).unwrap();
        prop_assert!(e.hg0 >= 0.0 && e.hg2 >= 0.0 && e.hgp >= 0.0);
    }

    #[test]
    fn apcd_total_is_antisymmetric(p in plant(), prov in province()) {
        let mut swapped = p.clone();
        std::mem::swap(&mut swapped.apcd_t1, &mut swapped.apcd_t2);
        let a = emission_delta_apcd(&p, &prov).unwrap().total();
        let b = emission_delta_apcd(&swapped, &prov).unwrap().total();
        let scale = p.coal_t2 * prov.coal_hg;
        prop_assert!((a + b).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE), "{a} vs {b}");
    }

    #[test]
    fn formulas_are_homogeneous_in_activity(mut p in plant(), prov in province(), lambda in 0.0..100.0f64) {
        let mut scaled = p.clone();
        scaled.coal_t1 *= lambda;
        scaled.coal_t2 *= lambda;
        scaled.power_t2 *= lambda;
        let pairs = [
            (emission_delta_apcd(&p, &prov).unwrap(), emission_delta_apcd(&scaled, &prov).unwrap()),
            (emission_delta_pge(&p, &prov).unwrap(), emission_delta_pge(&scaled, &prov).unwrap()),
        ];
        for (base, s) in pairs {
            prop_assert!(mass_close(&(base * lambda), &s, 1e-12));
        }
        p.status = PlantStatus::Decommissioned;
        scaled.status = PlantStatus::Decommissioned;
        let (base, s) = (emission_sus(&p, &prov).unwrap(), emission_sus(&scaled, &prov).unwrap());
        prop_assert!(mass_close(&(base * lambda), &s, 1e-12));
    }

    #[test]
    fn grouping_preserves_grand_total(ps in prop::collection::vec(plant(), 1..20), masses in prop::collection::vec((-1e5..1e6f64, -1e5..1e6f64, 0.0..1e4f64), 20)) {
        let plants: Vec<Plant> = ps.into_iter().enumerate().map(|(k, mut p)| {
            p.id = PlantId::new(format!("X{k:02}"));
            p.province = ["P1", "P2", "P3"][k % 3].into();
            p
        }).collect();
        let deltas: BTreeMap<PlantId, SpeciatedMass> = plants.iter().zip(&masses)
            .map(|(p, m)| (p.id.clone(), SpeciatedMass::new(m.0, m.1, m.2))).collect();
        let total: SpeciatedMass = deltas.values().sum();
        for key in [GroupKey::Province, GroupKey::Company, GroupKey::CapacityClass] {
            let g: SpeciatedMass = group_totals(&deltas, &plants, key).values().sum();
            prop_assert!(mass_close(&g, &total, 1e-12), "{key:?}");
        }
    }
}

fn small_params(grid: &GridSpec, u: f64, v: f64, k: f64, rates: (f64, f64, f64, f64), open: bool) -> TransportParams {
    let mut p = TransportParams::uniform(grid.cells(), u, v);
    p.diffusivity = k;
    p.deposition = SpeciesRates { hg0: rates.0, hg2: rates.1, hgp: rates.2 };
    p.oxidation = rates.3;
    p.boundary = if open { Boundary::Open } else { Boundary::Closed };
    p.horizon = 5.0 * 86400.0;
    p.dt = max_stable_dt(&p, grid).min(3600.0);
    p
}

fn transport_case() -> impl Strategy<Value = (TransportParams, EmissionField, EmissionField)> {
    let grid = GridSpec::uniform(8, 6, 50.0, "P1");
    let cell = (0usize..48, 0.0..1e4f64, 0.0..1e3f64, 0.0..1e2f64);
    (
        (-6.0..6.0f64, -6.0..6.0f64, 0.0..5e4f64),
        (1e-8..1e-6f64, 1e-6..1e-5f64, 1e-6..1e-5f64, 0.0..1e-6f64),
        any::<bool>(),
        prop::collection::vec(cell.clone(), 1..6),
        prop::collection::vec(cell, 1..6),
    )
        .prop_map(move |((u, v, k), rates, open, a, b)| {
            let field = |cells: Vec<(usize, f64, f64, f64)>| {
                let mut e = EmissionField::for_grid(&grid);
                for (c, x, y, z) in cells {
                    e.cells[c] += SpeciatedMass::new(x, y, z);
                }
                e
            };
            (small_params(&grid, u, v, k, rates, open), field(a), field(b))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transport_conserves_mass_and_stays_nonnegative((p, e, _) in transport_case()) {
        let grid = GridSpec::uniform(8, 6, 50.0, "P1");
        let d = simulate(&e, &p, &grid).unwrap();
        prop_assert!(d.mass_balance_error() <= 1e-6, "{}", d.mass_balance_error());
        prop_assert!(d.deposited.iter().all(|t| t.as_array().iter().all(|v| *v >= 0.0)));
        prop_assert!(d.airborne.as_array().iter().all(|v| *v >= 0.0));
        if p.oxidation == 0.0 {
            prop_assert_eq!(d.total_deposited().ox, 0.0);
        }
    }

    #[test]
    fn transport_is_linear((p, e1, e2) in transport_case(), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let grid = GridSpec::uniform(8, 6, 50.0, "P1");
        let combined = simulate(&e1.combine(&e2, a, b), &p, &grid).unwrap();
        let (d1, d2) = (simulate(&e1, &p, &grid).unwrap(), simulate(&e2, &p, &grid).unwrap());
        let peak = combined.deposited.iter().chain(&d1.deposited).chain(&d2.deposited)
            .flat_map(|t| t.as_array()).fold(0.0f64, |m, v| m.max(v.abs())) * (1.0 + a.abs() + b.abs());
        for k in 0..grid.cells() {
            let want = d1.deposited[k] * a + d2.deposited[k] * b;
            for (x, y) in combined.deposited[k].as_array().iter().zip(want.as_array()) {
                prop_assert!((x - y).abs() <= 1e-10 * peak, "cell {k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn srm_entries_are_fractions((p, e, _) in transport_case()) {
        let grid = GridSpec::uniform(8, 6, 50.0, "P1");
        let sources: BTreeSet<usize> = e.nonzero_cells().collect();
        let srm = build_srm(&p, &grid, &sources).unwrap();
        for col in &srm.columns {
            prop_assert!(col.deposited.iter().all(|t| t.as_array().iter().all(|v| *v >= 0.0)));
        }
        for s in srm.column_sums() {
            prop_assert!(s.hg0 + s.ox <= 1.0 + 1e-12 && s.hg2 <= 1.0 + 1e-12 && s.hgp <= 1.0 + 1e-12);
        }
    }
}

struct Demo {
    files: BTreeMap<String, String>,
    engine: Engine,
}

fn demo_state() -> &'static Demo {
    static D: OnceLock<Demo> = OnceLock::new();
    D.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        demo::write(dir.path(), None).unwrap();
        Demo { files: demo::files(None), engine: Engine::new(ingest(dir.path()).unwrap()).unwrap() }
    })
}

fn cross_border_share(r: &hgtrack::scenario::RunRecord) -> BTreeMap<String, f64> {
    let receivers: BTreeMap<_, _> = r.rankings.receivers.iter().map(|x| (x.province.to_string(), x.deaths)).collect();
    r.rankings.receptors.iter().map(|x| (x.province.to_string(), receivers[x.province.as_str()] / x.deaths)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn outcomes_scale_with_emissions(lambda in 0.01..50.0f64) {
        let d = demo_state();
        let mut bundle = d.engine.bundle.clone();
        for p in &mut bundle.provinces {
            p.coal_hg *= lambda;
        }
        let scaled = Engine::with_srm(bundle, d.engine.srm.clone());
        let sc = Scenario::new("x", &Measure::ALL, PlantFilter::all(), demo::epochs());
        let (a, b) = (d.engine.run(&sc).unwrap(), scaled.run(&sc).unwrap());
        for (p, o) in &a.outcome.by_province {
            let s = &b.outcome.by_province[p];
            prop_assert!(close(o.deaths * lambda, s.deaths, 1e-9) && close(o.iq_total * lambda, s.iq_total, 1e-9));
        }
        for (p, share) in cross_border_share(&a) {
            prop_assert!(close(share, cross_border_share(&b)[&p], 1e-9));
        }
    }

    #[test]
    fn enlarging_the_filter_never_lowers_shutdown_reduction(mask in prop::collection::vec(any::<bool>(), 12), extra in 0usize..12) {
        let d = demo_state();
        let ids: Vec<PlantId> = d.engine.bundle.plants.iter().map(|p| p.id.clone()).collect();
        let small: Vec<PlantId> = ids.iter().zip(&mask).filter(|(_, m)| **m).map(|(id, _)| id.clone()).collect();
        let mut large = small.clone();
        large.push(ids[extra].clone());
        let run = |sel: Vec<PlantId>| {
            d.engine.run(&Scenario::new("x", &[Measure::Sus], PlantFilter::ids(sel), demo::epochs())).unwrap().total_reduction().total()
        };
        prop_assert!(run(large) >= run(small));
    }

    #[test]
    fn zero_emission_gives_zero_outcome(seed in 0u64..4) {
        let d = demo_state();
        let sc = Scenario::new(&format!("z{seed}"), &Measure::ALL, PlantFilter::default(), demo::epochs());
        let r = d.engine.run(&sc).unwrap();
        prop_assert!(r.outcome.by_province.values().all(|o| o.deaths == 0.0 && o.iq_total == 0.0));
    }
}

#[derive(Debug, Clone)]
enum Mutation {
    DropChar(usize),
    InsertJunk(usize, char),
    TruncateAt(usize),
    DuplicateLine(usize),
    BlankField(usize),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        any::<usize>().prop_map(Mutation::DropChar),
        (any::<usize>(), prop::sample::select(vec![',', '-', 'x', '\n', '#', '[', '=', ' ', 'é', '\0'])).prop_map(|(i, c)| Mutation::InsertJunk(i, c)),
        any::<usize>().prop_map(Mutation::TruncateAt),
        any::<usize>().prop_map(Mutation::DuplicateLine),
        any::<usize>().prop_map(Mutation::BlankField),
    ]
}

fn apply(body: &str, m: &Mutation) -> String {
    let chars: Vec<char> = body.chars().collect();
    let at = |i: usize| if chars.is_empty() { 0 } else { i % chars.len() };
    match *m {
        Mutation::DropChar(i) => chars.iter().enumerate().filter(|(k, _)| *k != at(i)).map(|(_, c)| c).collect(),
        Mutation::InsertJunk(i, c) => {
            let mut v = chars.clone();
            v.insert(at(i), c);
            v.into_iter().collect()
        }
        Mutation::TruncateAt(i) => chars[..at(i)].iter().collect(),
        Mutation::DuplicateLine(i) => {
            let mut lines: Vec<&str> = body.lines().collect();
            let k = i % lines.len().max(1);
            if let Some(l) = lines.get(k).copied() {
                lines.insert(k, l);
            }
            lines.join("\n")
        }
        Mutation::BlankField(i) => {
            let mut fields: Vec<&str> = body.split(',').collect();
            let k = i % fields.len();
            fields[k] = "";
            fields.join(",")
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ingestion_never_panics(file in prop::sample::select(BUNDLE_FILES.to_vec()), muts in prop::collection::vec(mutation(), 1..4)) {
        let mut files = demo_state().files.clone();
        let mut body = files[file].clone();
        for m in &muts {
            body = apply(&body, m);
        }
        let changed = body != files[file];
        files.insert(file.to_owned(), body);
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &demo::epochs(), &files).unwrap();
        match ingest(dir.path()) {
            Ok(_) => {}
            Err(vs) => {
                prop_assert!(changed);
                prop_assert!(vs.iter().all(|v| v.file != "" && !v.message.is_empty()));
            }
        }
    }
}
