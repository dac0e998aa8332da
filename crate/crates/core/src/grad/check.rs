use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor for the relative error. Below this magnitude both
/// gradients are treated as equal-scale noise and the error is effectively
/// absolute.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

/// Worst element of one parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares reverse-mode gradients against central differences.
///
/// `loss` receives a tape and one leaf per entry of `params` (in order) and must
/// return a scalar node. It is called once on a recording tape for the analytic
/// gradient and twice per element on inference tapes for the estimate.
pub fn finite_difference_check<F>(
    params: &[(String, Tensor<f64>)],
    mut loss: F,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let leaves: Vec<NodeId> = params.iter().map(|(_, t)| tape.leaf_tensor(t, true)).collect();
    let out = loss(&mut tape, &leaves)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(params)
        .map(|(&id, (_, t))| tape.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    drop(tape);

    let mut work: Vec<Tensor<f64>> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut eval = |work: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::inference();
        let leaves: Vec<NodeId> = work.iter().map(|t| tape.leaf_tensor(t, false)).collect();
        let out = loss(&mut tape, &leaves)?;
        Ok(tape.scalar(out))
    };

    let mut report = Vec::with_capacity(params.len());
    for (p, (name, _)) in params.iter().enumerate() {
        let mut worst = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in analytic[p].iter().enumerate() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[p].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || i == 0 {
                worst = ParamCheck {
                    name: name.clone(),
                    max_rel_error: err,
                    worst_index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
        report.push(worst);
    }
    Ok(GradCheckReport { params: report, tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let params = vec![("x".to_string(), x)];
        let report = finite_difference_check(
            &params,
            // x² as a 1×1 product
            |tape, leaves| tape.matmul(leaves[0], leaves[0]),
            1e-5,
            1e-8,
        )
        .unwrap();
        let p = &report.params[0];
        assert_eq!(p.analytic, 6.0);
        assert!((p.numeric - 6.0).abs() < 1e-8, "{}", p.numeric);
        assert!(report.passed());
    }

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0 + 1e-9) - 1e-9).abs() < 1e-12);
        assert!((relative_error(1e-9, 0.0) - 1e-5).abs() < 1e-12);
    }
}
