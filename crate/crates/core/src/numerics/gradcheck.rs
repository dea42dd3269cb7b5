use super::{Graph, NumericsError, Tensor, Var};

/// Outcome of comparing autodiff gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max_i |fd_i − grad_i| / (|grad_i| + 1e-8)`.
    pub max_rel_error: f64,
    /// `(input, coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tol
    }
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.value(out).item()
}

/// Central-difference check of a scalar function of one tensor.
///
/// `f` records its computation on the supplied graph and returns the scalar
/// output node.
pub fn finite_difference_check<F>(f: F, x: &Tensor, h: f64) -> Result<GradCheck, NumericsError>
where
    F: Fn(&mut Graph, Var) -> Var,
{
    finite_difference_check_many(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)
}

/// Central-difference check of a scalar function of several tensors.
pub fn finite_difference_check_many<F>(
    f: F,
    inputs: &[Tensor],
    h: f64,
) -> Result<GradCheck, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let value = g.value(out).item();
    if !value.is_finite() {
        return Err(NumericsError::NonFinite { value });
    }
    let grads = g.backward(out)?;

    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (which, v) in vars.iter().enumerate() {
        let analytic = grads
            .slice(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[which].numel()]);
        for i in 0..inputs[which].numel() {
            let orig = inputs[which].data()[i];
            probe[which].data_mut()[i] = orig + h;
            let plus = eval(&f, &probe);
            probe[which].data_mut()[i] = orig - h;
            let minus = eval(&f, &probe);
            probe[which].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NumericsError::NonFinite {
                    value: if plus.is_finite() { minus } else { plus },
                });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs() / (analytic[i].abs() + 1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (which, i);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let r = finite_difference_check(
            |g, x| {
                let sq = g.mul(x, x);
                g.sum(sq)
            },
            &Tensor::from_vec(vec![3.0]),
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn non_finite_value_is_a_failure_not_a_panic() {
        let r = finite_difference_check(
            |g, x| {
                let inv = g.reciprocal(x);
                g.sum(inv)
            },
            &Tensor::from_vec(vec![0.0]),
            1e-5,
        );
        assert!(matches!(r, Err(NumericsError::NonFinite { .. })));
    }
}
