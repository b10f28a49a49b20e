use super::{solve_on_support, Lcp, LcpSolution, LcpStatus, SolverError};

const MAX_ENUMERATION_DIM: usize = 12;
const FEASIBILITY_TOL: f64 = 1e-10;

/// Enumerate all `2^m` supports of `LCP(q, F)` and return every solution found.
///
/// Singular principal subsystems are skipped. Solutions closer than `1e-9`
/// (max norm) to an earlier one are reported once.
pub fn brute_force_lcp(lcp: &Lcp) -> Result<Vec<LcpSolution>, SolverError> {
    let m = lcp.dim();
    if m > MAX_ENUMERATION_DIM {
        return Err(SolverError::TooLarge {
            m,
            max: MAX_ENUMERATION_DIM,
        });
    }
    let mut found: Vec<LcpSolution> = Vec::new();
    for mask in 0u32..(1u32 << m) {
        let support: Vec<bool> = (0..m).map(|i| mask & (1 << i) != 0).collect();
        let Some((lambda, y)) = solve_on_support(lcp, &support, FEASIBILITY_TOL) else {
            continue;
        };
        if found.iter().any(|s| (&s.lambda - &lambda).amax() < 1e-9) {
            continue;
        }
        found.push(LcpSolution {
            comp_residual: lambda.dot(&y),
            lambda,
            y,
            status: LcpStatus::Solved,
            pivots: 0,
        });
    }
    Ok(found)
}
