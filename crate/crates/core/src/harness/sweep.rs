use super::{run_case, CaseConfig, CaseResult, HarnessError, SubdomainSpec};

/// `(degree, divs)` pairs of the default mesh-size study.
pub fn default_h_cases() -> Vec<(usize, usize)> {
    (1..=3).flat_map(|p| [2, 3, 4, 6].map(|d| (p, d))).collect()
}

/// Rows ordered by degree, subdomain count and mesh.
pub fn sort_results(results: &mut [CaseResult]) {
    results.sort_by_key(|r| (r.deg, r.subs, r.divs, r.patchs));
}

/// Mesh-size study on the layout of `base`.
pub fn sweep_h(
    base: &CaseConfig,
    cases: &[(usize, usize)],
) -> Result<Vec<CaseResult>, HarnessError> {
    let mut results = cases
        .iter()
        .map(|&(degree, divs)| {
            run_case(&CaseConfig {
                degree,
                divs,
                ..base.clone()
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    sort_results(&mut results);
    Ok(results)
}

/// Subdomain-count study at the mesh of `base`, with generated layouts.
pub fn sweep_subdomains(
    base: &CaseConfig,
    counts: &[usize],
    degrees: &[usize],
) -> Result<Vec<CaseResult>, HarnessError> {
    let mut results = Vec::with_capacity(counts.len() * degrees.len());
    for &degree in degrees {
        for &n in counts {
            let config = CaseConfig {
                degree,
                subdomains: SubdomainSpec::Count(n),
                ..base.clone()
            };
            results.push(run_case(&config)?);
        }
    }
    sort_results(&mut results);
    Ok(results)
}
