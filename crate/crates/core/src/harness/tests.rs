use super::*;
use crate::gauge::DofClass;
use crate::geometry::box_grid;

fn row(divs: usize, err: f64) -> CsvRow {
    CsvRow {
        divs,
        patchs: 27,
        deg: 2,
        subs: 3,
        pri: 1,
        err,
        cond: 4.5,
        iter: 7,
    }
}

#[test]
fn config_defaults_and_validation() {
    let c = CaseConfig::from_json(r#"{"degree": 2, "divs": 3}"#).unwrap();
    assert_eq!(c, CaseConfig::new(2, 3, SubdomainSpec::Count(1)));
    let c = CaseConfig::from_json(
        r#"{"geometry": {"kind": "cube27"}, "degree": 1, "divs": 2, "subdomains": "three_part",
            "cond_mode": "exact", "case": "zero", "execution": "sequential", "seed": 9}"#,
    )
    .unwrap();
    assert_eq!(c.subdomains, SubdomainSpec::ThreePart);
    assert_eq!(
        (c.cond_mode, c.case, c.seed),
        (ConditionMode::Exact, ManufacturedCase::Zero, 9)
    );
    assert!((c.mesh_size() - 1.0 / 6.0).abs() < 1e-15);

    for bad in [
        r#"{"degree": 4, "divs": 2}"#,
        r#"{"degree": 1, "divs": 0}"#,
        r#"{"degree": 1, "divs": 2, "tol": 0}"#,
        r#"{"degree": 1, "divs": 2, "subdomains": {"count": 28}}"#,
        r#"{"degree": 1, "divs": 2, "subdomains": {"assignment": [0, 1]}}"#,
        r#"{"degree": 1, "divs": 2, "typo": 1}"#,
    ] {
        assert!(CaseConfig::from_json(bad).is_err(), "{bad}");
    }
    let patches = serde_json::to_string(&box_grid([2, 1, 1], [2.0, 1.0, 1.0])).unwrap();
    let text = format!(
        r#"{{"geometry": {{"kind": "patches", "patches": {patches}}}, "degree": 1, "divs": 1,
            "subdomains": "three_part"}}"#
    );
    assert!(matches!(
        CaseConfig::from_json(&text),
        Err(HarnessError::InvalidConfig(_))
    ));
}

#[test]
fn scientific_format_matches_printf() {
    let cases = [
        (1.0, "1.0000000000000000e+00"),
        (0.0, "0.0000000000000000e+00"),
        (-2.5, "-2.5000000000000000e+00"),
        (1.23e-4, "1.2300000000000001e-04"),
        (1e100, "1.0000000000000000e+100"),
        (6.02214076e23, "6.0221407599999999e+23"),
        (f64::NAN, "nan"),
    ];
    for (x, s) in cases {
        assert_eq!(format_sci(x), s);
    }
}

#[test]
fn csv_round_trip() {
    let mut empty = Vec::new();
    write_csv(&[], &mut empty).unwrap();
    assert_eq!(
        String::from_utf8(empty).unwrap(),
        "divs,patchs,deg,subs,pri,err,cond,iter\n"
    );

    let rows = [
        row(2, 0.125),
        CsvRow {
            cond: f64::NAN,
            ..row(3, 1.0 / 3.0)
        },
    ];
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "2,27,2,3,1,1.2500000000000000e-01,4.5000000000000000e+00,7"
    );
    let back = parse_csv(buf.as_slice()).unwrap();
    assert_eq!(back[0], rows[0]);
    assert_eq!(back[1].err, rows[1].err);
    assert!(back[1].cond.is_nan());
    assert!(parse_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn eoc_of_exact_power_law() {
    // err = 5 h^2 with h = 1 / (3 divs)
    let rows: Vec<CsvRow> = [6, 2, 4, 3]
        .iter()
        .map(|&d| row(d, 5.0 / (3.0 * d as f64).powi(2)))
        .collect();
    let table = eoc_table(&rows);
    assert_eq!(
        table
            .iter()
            .map(|r| (r.divs_coarse, r.divs_fine))
            .collect::<Vec<_>>(),
        [(2, 3), (3, 4), (4, 6)]
    );
    assert!(table.iter().all(|r| (r.eoc - 2.0).abs() < 1e-12));
    let mut buf = Vec::new();
    write_eoc_csv(&table, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
}

#[test]
fn single_subdomain_matches_monolithic_error() {
    let run = run_case_detailed(&CaseConfig::new(1, 2, SubdomainSpec::Count(1))).unwrap();
    let mono = run.pipeline.monolithic().unwrap();
    let err = run
        .pipeline
        .flux_error(&run.pipeline.restrict(&mono), &|x| {
            ManufacturedCase::Trigonometric.flux(x)
        });
    assert_eq!(run.result.err, err);
    assert_eq!(
        (run.result.iter, run.result.pri, run.result.subs),
        (0, 0, 1)
    );
    assert!(run.result.cond.is_nan());
}

#[test]
fn zero_data_gives_zero_fields() {
    let config = CaseConfig {
        case: ManufacturedCase::Zero,
        ..CaseConfig::new(1, 2, SubdomainSpec::ThreePart)
    };
    let run = run_case_detailed(&config).unwrap();
    assert_eq!(run.result.err, 0.0);
    assert_eq!(run.result.iter, 0);
    assert!(run.fields.coefficients.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn identical_configs_give_identical_csv() {
    let csv_of = |exec: Execution| {
        let config = CaseConfig {
            seed: 11,
            execution: exec,
            ..CaseConfig::new(1, 2, SubdomainSpec::Count(5))
        };
        let result = run_case(&config).unwrap();
        let mut buf = Vec::new();
        write_csv(&[result.row()], &mut buf).unwrap();
        buf
    };
    let a = csv_of(Execution::Parallel);
    assert_eq!(a, csv_of(Execution::Parallel));
    assert_eq!(a, csv_of(Execution::Sequential));
}

#[test]
fn three_part_sweep_keeps_coarse_size() {
    let base = CaseConfig::new(1, 2, SubdomainSpec::ThreePart);
    let results = sweep_h(&base, &[(2, 2), (1, 3), (1, 2)]).unwrap();
    assert_eq!(
        results.iter().map(|r| (r.deg, r.divs)).collect::<Vec<_>>(),
        [(1, 2), (1, 3), (2, 2)]
    );
    assert!(results
        .iter()
        .all(|r| r.pri == results[0].pri && r.subs == 3));
    assert!(results[1].err < results[0].err);
}

#[test]
fn subdomain_sweep_keeps_error() {
    let base = CaseConfig {
        tol: 1e-10,
        ..CaseConfig::new(1, 2, SubdomainSpec::Count(1))
    };
    let results = sweep_subdomains(&base, &[4, 2], &[1]).unwrap();
    assert_eq!(results.iter().map(|r| r.subs).collect::<Vec<_>>(), [2, 4]);
    let (a, b) = (results[0].err, results[1].err);
    assert!((a - b).abs() <= 1e-8 * a);
}

#[test]
fn partition_and_gauge_outputs() {
    let p = Pipeline::discretize(&CaseConfig::new(1, 1, SubdomainSpec::ThreePart)).unwrap();
    let mut buf = Vec::new();
    write_partition_csv(&p.layout, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 28);
    assert_eq!(text.lines().nth(1).unwrap(), "0,0");

    let mut buf = Vec::new();
    write_gauge_csv(&p.gauge, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), p.graph.n_edges() + 1);
    let tree_rows = text
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(DofClass::Tree.label()))
        .count();
    let interior_tree = (0..p.graph.n_edges())
        .filter(|&e| p.gauge.in_tree[e] && !p.graph.edge_dirichlet[e])
        .count();
    assert_eq!(tree_rows, interior_tree);

    let mut buf = Vec::new();
    write_gauge_dot(&p.graph, &p.gauge, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().matches("graph ").count(), 3);
}

#[test]
fn plot_script_names_every_column() {
    for s in [plot_script("h.csv", false), plot_script("sub.csv", true)] {
        for col in ["pri", "err", "cond", "iter"] {
            assert!(s.contains(&format!("\"{col}\"")));
        }
    }
}
