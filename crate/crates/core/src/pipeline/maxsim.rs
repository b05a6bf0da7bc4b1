//! Late-interaction MaxSim.
//!
//! ```text
//! maxsim(Q, C) = Σ_i max_j ⟨Q_i, C_j⟩
//! ```
//!
//! Not symmetric: the first argument is the query.

use super::PipelineError;
use crate::par::Exec;
use crate::provider::{dot, TokenMatrix};

pub fn maxsim(query: &TokenMatrix, candidate: &TokenMatrix) -> Result<f64, PipelineError> {
    if query.dims() != candidate.dims() {
        return Err(PipelineError::DimsMismatch {
            query: query.dims(),
            candidate: candidate.dims(),
        });
    }
    Ok(query
        .iter_rows()
        .map(|q| {
            candidate
                .iter_rows()
                .map(|c| dot(q, c))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum())
}

/// MaxSim of one query against many candidates, one work item each.
pub fn maxsim_many(query: &TokenMatrix, candidates: &[TokenMatrix], exec: Exec) -> Result<Vec<f64>, PipelineError> {
    exec.try_map(candidates, |c| maxsim(query, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> TokenMatrix {
        TokenMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_row_picks_its_match() {
        assert_eq!(maxsim(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap(), 1.0);
    }

    #[test]
    fn rows_sum_their_maxima() {
        // 0.5 + 0.5
        assert_eq!(maxsim(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), &m(&[&[0.5, 0.5]])).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_is_zero() {
        let q = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let c = m(&[&[0.0, 0.0, 1.0], &[0.0, 0.0, -2.0]]);
        assert_eq!(maxsim(&q, &c).unwrap(), 0.0);
    }

    #[test]
    fn dims_mismatch() {
        assert!(matches!(
            maxsim(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 0.0, 0.0]])),
            Err(PipelineError::DimsMismatch { query: 2, candidate: 3 })
        ));
    }

    #[test]
    fn not_symmetric() {
        let q = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let c = m(&[&[0.5, 0.5]]);
        assert_eq!(maxsim(&c, &q).unwrap(), 0.5);
    }
}
