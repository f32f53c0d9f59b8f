use magneto_dd::assembly::ManufacturedCase;
use magneto_dd::fetidp::ConditionMode;
use magneto_dd::geometry::box_grid;
use magneto_dd::harness::{run_case_detailed, CaseConfig, GeometrySpec, SubdomainSpec};

fn agreement(config: &CaseConfig) -> f64 {
    let run = run_case_detailed(config).unwrap();
    let mono = run.pipeline.restrict(&run.pipeline.monolithic().unwrap());
    run.pipeline
        .relative_flux_difference(&run.fields.coefficients, &mono)
}

#[test]
fn warped_cube_matches_monolithic() {
    let config = CaseConfig {
        geometry: GeometrySpec::WarpedCube27 { amplitude: 0.15 },
        tol: 1e-10,
        ..CaseConfig::new(2, 2, SubdomainSpec::Count(5))
    };
    assert!(agreement(&config) <= 1e-8);
}

#[test]
fn one_patch_per_subdomain() {
    let config = CaseConfig {
        tol: 1e-10,
        ..CaseConfig::new(1, 2, SubdomainSpec::Count(27))
    };
    let run = run_case_detailed(&config).unwrap();
    assert_eq!(run.result.subs, 27);
    assert!(run.result.iter <= 20);
    let mono = run.pipeline.restrict(&run.pipeline.monolithic().unwrap());
    assert!(
        run.pipeline
            .relative_flux_difference(&run.fields.coefficients, &mono)
            <= 1e-8
    );
}

#[test]
fn explicit_patch_list_and_assignment() {
    let config = CaseConfig {
        geometry: GeometrySpec::Patches {
            patches: box_grid([3, 1, 1], [3.0, 1.0, 1.0]),
            tol: None,
        },
        tol: 1e-10,
        cond_mode: ConditionMode::Exact,
        ..CaseConfig::new(2, 2, SubdomainSpec::Assignment(vec![0, 1, 2]))
    };
    let run = run_case_detailed(&config).unwrap();
    assert_eq!(run.result.subs, 3);
    // a chain of subdomains has no edge shared by three of them
    assert_eq!(run.result.pri, 0);
    assert!(run.result.cond >= 1.0);
    assert!(agreement(&config) <= 1e-8);
}

#[test]
fn error_shrinks_with_degree() {
    let errs: Vec<f64> = (1..=3)
        .map(|p| {
            run_case_detailed(&CaseConfig::new(p, 2, SubdomainSpec::ThreePart))
                .unwrap()
                .result
                .err
        })
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    let norm = ManufacturedCase::Trigonometric
        .flux_norm_sq_closed_form()
        .sqrt();
    assert!(errs[0] < norm);
}
